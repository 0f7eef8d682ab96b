#include "scq/mat.hpp"

#include <algorithm>
#include <cmath>

namespace scq {

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  SCQ_EXPECT(data_.size() == rows_ * cols_, "Mat: data length does not match shape");
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Mat m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    SCQ_EXPECT(row.size() == c, "Mat::from_rows: ragged rows");
    std::copy(row.begin(), row.end(), m.data() + i * c);
    ++i;
  }
  return m;
}

Mat Mat::column(std::initializer_list<double> values) {
  Mat m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

std::string Mat::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Mat::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows_; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols_; c0 += kTile) {
      const std::size_t r1 = std::min(rows_, r0 + kTile), c1 = std::min(cols_, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) t.data_[c * rows_ + r] = data_[r * cols_ + c];
    }
  return t;
}

Mat Mat::col_copy(std::size_t c) const {
  Mat out(rows_, 1);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = data_[r * cols_ + c];
  return out;
}

Mat& Mat::operator+=(const Mat& o) {
  require_same_shape(*this, o, "Mat::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& o) {
  require_same_shape(*this, o, "Mat::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(Mat a, double s) { return a *= s; }

double frobenius_norm(const Mat& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Mat& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const Mat& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

bool all_finite(const Mat& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (!a.same_shape(b))
    throw ContractViolation(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

}  // namespace scq
