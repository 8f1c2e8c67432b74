#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace scan {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Frames-by-features everywhere: a clip
// with T frames and D-dim features is a T x D matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rws);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

std::string shape_str(const Matrix& m);

// y += a * x, elementwise over equally sized buffers.
void axpy(double a, const Vector& x, Vector& y);
void axpy(double a, const Matrix& x, Matrix& y);

double dot(const Vector& a, const Vector& b);
double l2_norm(const Vector& v);

// Fully connected layer; weight is in_dim x out_dim so that a T x in_dim
// input maps to T x out_dim by plain row-times-matrix products.
struct LinearLayer {
  Matrix weight;
  Vector bias;

  std::size_t in_dim() const { return weight.rows; }
  std::size_t out_dim() const { return weight.cols; }
};

struct LinearGrads {
  Matrix input;
  Matrix weight;
  Vector bias;
};

// out[t, j] = sum_i x[t, i] * W[i, j] + b[j]
Matrix linear_forward(const Matrix& x, const LinearLayer& layer);

// grad_input = grad_out * W^T, grad_weight = x^T * grad_out,
// grad_bias[j] = sum_t grad_out[t, j]
LinearGrads linear_backward(const Matrix& x, const LinearLayer& layer, const Matrix& grad_out);

// Softmax independently down each column (over the time axis). The column
// max is subtracted before exponentiation so any finite input stays finite.
Matrix softmax_temporal(const Matrix& logits);

// grad_logits[t, d] = out[t, d] * (grad_out[t, d] - sum_u grad_out[u, d] * out[u, d])
Matrix softmax_temporal_backward(const Matrix& out, const Matrix& grad_out);

// out[d] = sum_t weights[t, d] * frames[t, d]
Vector weighted_sum(const Matrix& weights, const Matrix& frames);

struct WeightedSumGrads {
  Matrix weights;
  Matrix frames;
};

WeightedSumGrads weighted_sum_backward(const Matrix& weights, const Matrix& frames,
                                       const Vector& grad_out);

Vector column_mean(const Matrix& x);

// Spread grad_out evenly over the rows feeding a column mean.
Matrix column_mean_backward(std::size_t rows, const Vector& grad_out);

// out[d] = max_t x[t, d]; argmax_rows records the first row attaining
// each maximum so the pooling can be differentiated.
Vector column_max(const Matrix& x, std::vector<std::size_t>* argmax_rows = nullptr);

}  // namespace scan
