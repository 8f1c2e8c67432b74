#include "scan/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rws) {
  Matrix m;
  m.rows = rws.size();
  m.cols = rws.size() ? rws.begin()->size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : rws) {
    require(r.size() == m.cols, "from_rows: ragged rows");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

void axpy(double a, const Vector& x, Vector& y) {
  require(x.size() == y.size(), "axpy: size mismatch " + std::to_string(x.size()) + " vs " +
                                    std::to_string(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void axpy(double a, const Matrix& x, Matrix& y) {
  require(x.same_shape(y), "axpy: shape mismatch " + shape_str(x) + " vs " + shape_str(y));
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] += a * x.data[i];
}

double dot(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "dot: size mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(const Vector& v) { return std::sqrt(dot(v, v)); }

Matrix linear_forward(const Matrix& x, const LinearLayer& layer) {
  require(x.cols == layer.in_dim(), "linear_forward: input cols " + shape_str(x) +
                                        " vs weight " + shape_str(layer.weight));
  require(layer.bias.size() == layer.out_dim(), "linear_forward: bias size mismatch");
  Matrix out(x.rows, layer.out_dim());
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* xr = x.row(t);
    double* orow = out.row(t);
    for (std::size_t j = 0; j < layer.out_dim(); ++j) orow[j] = layer.bias[j];
    for (std::size_t i = 0; i < x.cols; ++i) {
      double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wr = layer.weight.row(i);
      for (std::size_t j = 0; j < layer.out_dim(); ++j) orow[j] += xi * wr[j];
    }
  }
  return out;
}

LinearGrads linear_backward(const Matrix& x, const LinearLayer& layer, const Matrix& grad_out) {
  require(x.cols == layer.in_dim(), "linear_backward: input/weight mismatch");
  require(grad_out.rows == x.rows && grad_out.cols == layer.out_dim(),
          "linear_backward: grad_out shape " + shape_str(grad_out));
  LinearGrads g;
  g.input = Matrix(x.rows, x.cols);
  g.weight = Matrix(layer.weight.rows, layer.weight.cols);
  g.bias = Vector(layer.out_dim(), 0.0);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* go = grad_out.row(t);
    const double* xr = x.row(t);
    double* gi = g.input.row(t);
    for (std::size_t j = 0; j < layer.out_dim(); ++j) g.bias[j] += go[j];
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double* wr = layer.weight.row(i);
      double* gw = g.weight.row(i);
      double acc = 0.0;
      double xi = xr[i];
      for (std::size_t j = 0; j < layer.out_dim(); ++j) {
        acc += go[j] * wr[j];
        gw[j] += xi * go[j];
      }
      gi[i] = acc;
    }
  }
  return g;
}

Matrix softmax_temporal(const Matrix& logits) {
  require(logits.rows > 0, "softmax_temporal: empty input");
  Matrix out(logits.rows, logits.cols);
  for (std::size_t d = 0; d < logits.cols; ++d) {
    double mx = logits(0, d);
    for (std::size_t t = 1; t < logits.rows; ++t) mx = std::max(mx, logits(t, d));
    double sum = 0.0;
    for (std::size_t t = 0; t < logits.rows; ++t) {
      double e = std::exp(logits(t, d) - mx);
      out(t, d) = e;
      sum += e;
    }
    for (std::size_t t = 0; t < logits.rows; ++t) out(t, d) /= sum;
  }
  return out;
}

Matrix softmax_temporal_backward(const Matrix& out, const Matrix& grad_out) {
  require(out.same_shape(grad_out), "softmax_temporal_backward: shape mismatch " + shape_str(out) +
                                        " vs " + shape_str(grad_out));
  Matrix g(out.rows, out.cols);
  for (std::size_t d = 0; d < out.cols; ++d) {
    double inner = 0.0;
    for (std::size_t t = 0; t < out.rows; ++t) inner += grad_out(t, d) * out(t, d);
    for (std::size_t t = 0; t < out.rows; ++t) g(t, d) = out(t, d) * (grad_out(t, d) - inner);
  }
  return g;
}

Vector weighted_sum(const Matrix& weights, const Matrix& frames) {
  require(weights.same_shape(frames), "weighted_sum: shape mismatch " + shape_str(weights) +
                                          " vs " + shape_str(frames));
  Vector out(weights.cols, 0.0);
  for (std::size_t t = 0; t < weights.rows; ++t) {
    const double* wr = weights.row(t);
    const double* fr = frames.row(t);
    for (std::size_t d = 0; d < weights.cols; ++d) out[d] += wr[d] * fr[d];
  }
  return out;
}

WeightedSumGrads weighted_sum_backward(const Matrix& weights, const Matrix& frames,
                                       const Vector& grad_out) {
  require(weights.same_shape(frames), "weighted_sum_backward: shape mismatch");
  require(grad_out.size() == weights.cols, "weighted_sum_backward: grad size mismatch");
  WeightedSumGrads g;
  g.weights = Matrix(weights.rows, weights.cols);
  g.frames = Matrix(frames.rows, frames.cols);
  for (std::size_t t = 0; t < weights.rows; ++t) {
    for (std::size_t d = 0; d < weights.cols; ++d) {
      g.weights(t, d) = grad_out[d] * frames(t, d);
      g.frames(t, d) = grad_out[d] * weights(t, d);
    }
  }
  return g;
}

Vector column_mean(const Matrix& x) {
  require(x.rows > 0, "column_mean: empty input");
  Vector out(x.cols, 0.0);
  for (std::size_t t = 0; t < x.rows; ++t)
    for (std::size_t d = 0; d < x.cols; ++d) out[d] += x(t, d);
  for (std::size_t d = 0; d < x.cols; ++d) out[d] /= static_cast<double>(x.rows);
  return out;
}

Matrix column_mean_backward(std::size_t rows, const Vector& grad_out) {
  require(rows > 0, "column_mean_backward: zero rows");
  Matrix g(rows, grad_out.size());
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t d = 0; d < grad_out.size(); ++d)
      g(t, d) = grad_out[d] / static_cast<double>(rows);
  return g;
}

Vector column_max(const Matrix& x, std::vector<std::size_t>* argmax_rows) {
  require(x.rows > 0, "column_max: empty input");
  Vector out(x.cols);
  if (argmax_rows) argmax_rows->assign(x.cols, 0);
  for (std::size_t d = 0; d < x.cols; ++d) {
    double best = x(0, d);
    std::size_t best_t = 0;
    for (std::size_t t = 1; t < x.rows; ++t) {
      if (x(t, d) > best) {
        best = x(t, d);
        best_t = t;
      }
    }
    out[d] = best;
    if (argmax_rows) (*argmax_rows)[d] = best_t;
  }
  return out;
}

}  // namespace scan
