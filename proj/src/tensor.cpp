#include "depthforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace df {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw NumericError(std::string(op) + ": undefined tensor");
}

// ---- matmul kernels. Each output element is owned by exactly one thread and
// summed in a fixed order, so results are bit-identical for any thread count.

constexpr std::size_t kParallelWork = 1u << 15;

// c += a(n x k) * b(k x m)
void kernel_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c += a(n x k) * b(m x k)^T
void kernel_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c += a(k x n)^T * b(k x m)
void kernel_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * n + i];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor make_op_output(std::size_t rows, std::size_t cols, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->rows = rows;
  d->cols = cols;
  d->value.assign(rows * cols, 0.0);
  d->requires_grad = requires_grad;
  if (requires_grad) d->grad.assign(rows * cols, 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  if (rows == 0 || cols == 0) throw NumericError("Tensor: dimensions must be positive");
  return make_op_output(rows, cols, requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::fill(t.d_->value.begin(), t.d_->value.end(), v);
  return t;
}

Tensor Tensor::from_data(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad) {
  if (rows * cols != data.size()) {
    throw NumericError("Tensor: shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not match data length " + std::to_string(data.size()));
  }
  Tensor t = zeros(rows, cols, requires_grad);
  t.d_->value = std::move(data);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return full(1, 1, v, requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  Tensor t = zeros(n, n, requires_grad);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::random_gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                               double stddev, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  for (auto& v : t.d_->value) v = stddev * df::gaussian(rng);
  return t;
}

double Tensor::scalar_value() const {
  require_defined(*this, "scalar_value");
  if (numel() != 1) throw NumericError("scalar_value: tensor is " + shape_str(*this));
  return d_->value[0];
}

std::span<double> Tensor::grads() {
  if (!requires_grad()) throw NumericError("grads: tensor does not carry gradients");
  return {d_->grad.data(), d_->grad.size()};
}

std::span<const double> Tensor::grads() const {
  if (!requires_grad()) throw NumericError("grads: tensor does not carry gradients");
  return {d_->grad.data(), d_->grad.size()};
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

void Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  d_->requires_grad = on;
  if (on) {
    d_->grad.assign(d_->value.size(), 0.0);
  } else {
    d_->grad.clear();
  }
}

// ---- tape -------------------------------------------------------------------

void Tape::push(std::function<void()> backward_fn, std::shared_ptr<TensorData> output) {
  backward_fns_.push_back(std::move(backward_fn));
  outputs_.push_back(std::move(output));
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw NumericError("backward: loss must be scalar, got " + shape_str(loss));
  }
  if (backward_done_) {
    throw NumericError("backward: already run for this tape; record a new forward first");
  }
  backward_done_ = true;
  auto d = loss.storage();
  if (d->requires_grad) {
    d->grad.assign(d->value.size(), 0.0);
    d->grad[0] = 1.0;
  }
  for (auto it = backward_fns_.rbegin(); it != backward_fns_.rend(); ++it) (*it)();
}

// ---- op helpers -------------------------------------------------------------

namespace {

bool track(const Tape& t, std::initializer_list<const Tensor*> inputs) {
  if (!t.recording()) return false;
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) return true;
  }
  return false;
}

void accumulate(const std::shared_ptr<TensorData>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst->grad[i] += src[i];
}

}  // namespace

// ---- primitives -------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw NumericError("matmul: inner dimensions differ, " + shape_str(a) + " * " + shape_str(b));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = make_op_output(n, m, track(t, {&a, &b}));
  kernel_nn(a.values().data(), b.values().data(), out.values().data(), n, k, m);
  if (out.requires_grad()) {
    auto da = a.storage(), db = b.storage(), dout = out.storage();
    t.push(
        [da, db, dout, n, k, m] {
          if (da->requires_grad) {
            kernel_nt(dout->grad.data(), db->value.data(), da->grad.data(), n, m, k);
          }
          if (db->requires_grad) {
            kernel_tn(da->value.data(), dout->grad.data(), db->grad.data(), k, n, m);
          }
        },
        dout);
  }
  return out;
}

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw NumericError("add: shape mismatch, " + shape_str(a) + " vs " + shape_str(b));
  }
  Tensor out = make_op_output(a.rows(), a.cols(), track(t, {&a, &b}));
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    auto da = a.storage(), db = b.storage(), dout = out.storage();
    t.push(
        [da, db, dout] {
          if (da->requires_grad) accumulate(da, dout->grad);
          if (db->requires_grad) accumulate(db, dout->grad);
        },
        dout);
  }
  return out;
}

Tensor scale(Tape& t, const Tensor& a, double s) {
  require_defined(a, "scale");
  Tensor out = make_op_output(a.rows(), a.cols(), track(t, {&a}));
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = s * av[i];
  if (out.requires_grad()) {
    auto da = a.storage(), dout = out.storage();
    t.push(
        [da, dout, s] {
          if (!da->requires_grad) return;
          for (std::size_t i = 0; i < dout->grad.size(); ++i) da->grad[i] += s * dout->grad[i];
        },
        dout);
  }
  return out;
}

Tensor scale(Tape& t, const Tensor& a, const Tensor& s) {
  require_defined(a, "scale");
  require_defined(s, "scale");
  if (s.numel() != 1) throw NumericError("scale: factor must be 1x1, got " + shape_str(s));
  const double sv = s.values()[0];
  Tensor out = make_op_output(a.rows(), a.cols(), track(t, {&a, &s}));
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = sv * av[i];
  if (out.requires_grad()) {
    auto da = a.storage(), ds = s.storage(), dout = out.storage();
    t.push(
        [da, ds, dout] {
          const double sval = ds->value[0];
          if (da->requires_grad) {
            for (std::size_t i = 0; i < dout->grad.size(); ++i)
              da->grad[i] += sval * dout->grad[i];
          }
          if (ds->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < dout->grad.size(); ++i)
              acc += da->value[i] * dout->grad[i];
            ds->grad[0] += acc;
          }
        },
        dout);
  }
  return out;
}

Tensor scale_elems(Tape& t, const Tensor& a, std::vector<double> factors) {
  require_defined(a, "scale_elems");
  if (factors.size() != a.numel()) {
    throw NumericError("scale_elems: factor grid length " + std::to_string(factors.size()) +
                       " does not match tensor " + shape_str(a));
  }
  Tensor out = make_op_output(a.rows(), a.cols(), track(t, {&a}));
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = factors[i] * av[i];
  if (out.requires_grad()) {
    auto da = a.storage(), dout = out.storage();
    t.push(
        [da, dout, f = std::move(factors)] {
          if (!da->requires_grad) return;
          for (std::size_t i = 0; i < dout->grad.size(); ++i) da->grad[i] += f[i] * dout->grad[i];
        },
        dout);
  }
  return out;
}

Tensor concat_cols(Tape& t, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw NumericError("concat_cols: empty input list");
  const std::size_t n = xs[0].rows();
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& x : xs) {
    require_defined(x, "concat_cols");
    if (x.rows() != n) {
      throw NumericError("concat_cols: row mismatch, " + shape_str(xs[0]) + " vs " + shape_str(x));
    }
    total += x.cols();
    rg = rg || x.requires_grad();
  }
  Tensor out = make_op_output(n, total, t.recording() && rg);
  std::size_t col = 0;
  for (const Tensor& x : xs) {
    const std::size_t c = x.cols();
    auto xv = x.values();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(xv.data() + i * c, c, out.values().data() + i * total + col);
    }
    col += c;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorData>> parts;
    parts.reserve(xs.size());
    for (const Tensor& x : xs) parts.push_back(x.storage());
    auto dout = out.storage();
    t.push(
        [parts, dout, n, total] {
          std::size_t col = 0;
          for (const auto& p : parts) {
            const std::size_t c = p->cols;
            if (p->requires_grad) {
              for (std::size_t i = 0; i < n; ++i) {
                const double* g = dout->grad.data() + i * total + col;
                double* pg = p->grad.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) pg[j] += g[j];
              }
            }
            col += c;
          }
        },
        dout);
  }
  return out;
}

Tensor softmax_rows(Tape& t, const Tensor& a) {
  require_defined(a, "softmax_rows");
  const std::size_t n = a.rows(), m = a.cols();
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!std::isfinite(av[i * m + j])) {
        throw NumericError("softmax_rows: non-finite input at row " + std::to_string(i));
      }
    }
  }
  Tensor out = make_op_output(n, m, track(t, {&a}));
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = av.data() + i * m;
    double* y = ov.data() + i * m;
    double mx = x[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < m; ++j) y[j] *= inv;
  }
  if (out.requires_grad()) {
    auto da = a.storage(), dout = out.storage();
    t.push(
        [da, dout, n, m] {
          if (!da->requires_grad) return;
          for (std::size_t i = 0; i < n; ++i) {
            const double* y = dout->value.data() + i * m;
            const double* gy = dout->grad.data() + i * m;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += gy[j] * y[j];
            double* gx = da->grad.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) gx[j] += y[j] * (gy[j] - dot);
          }
        },
        dout);
  }
  return out;
}

Tensor relu(Tape& t, const Tensor& a) {
  require_defined(a, "relu");
  Tensor out = make_op_output(a.rows(), a.cols(), track(t, {&a}));
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (out.requires_grad()) {
    auto da = a.storage(), dout = out.storage();
    t.push(
        [da, dout] {
          if (!da->requires_grad) return;
          for (std::size_t i = 0; i < dout->grad.size(); ++i) {
            if (da->value[i] > 0.0) da->grad[i] += dout->grad[i];
          }
        },
        dout);
  }
  return out;
}

Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  const std::size_t n = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw NumericError("layer_norm: gain/bias must be 1x" + std::to_string(c));
  }
  Tensor out = make_op_output(n, c, track(t, {&x, &gain, &bias}));
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  auto ov = out.values();
  std::vector<double> xhat(n * c);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = xv.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[i] = istd;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xi[j] - mean) * istd;
      xhat[i * c + j] = h;
      ov[i * c + j] = gv[j] * h + bv[j];
    }
  }
  if (out.requires_grad()) {
    auto dx = x.storage(), dg = gain.storage(), db = bias.storage(), dout = out.storage();
    t.push(
        [dx, dg, db, dout, n, c, xh = std::move(xhat), istd = std::move(inv_std)] {
          for (std::size_t i = 0; i < n; ++i) {
            const double* gy = dout->grad.data() + i * c;
            const double* h = xh.data() + i * c;
            if (dg->requires_grad) {
              for (std::size_t j = 0; j < c; ++j) dg->grad[j] += gy[j] * h[j];
            }
            if (db->requires_grad) {
              for (std::size_t j = 0; j < c; ++j) db->grad[j] += gy[j];
            }
            if (dx->requires_grad) {
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < c; ++j) {
                const double gh = gy[j] * dg->value[j];
                m1 += gh;
                m2 += gh * h[j];
              }
              m1 /= static_cast<double>(c);
              m2 /= static_cast<double>(c);
              double* gx = dx->grad.data() + i * c;
              for (std::size_t j = 0; j < c; ++j) {
                const double gh = gy[j] * dg->value[j];
                gx[j] += istd[i] * (gh - m1 - h[j] * m2);
              }
            }
          }
        },
        dout);
  }
  return out;
}

Tensor cross_entropy_rows(Tape& t, const Tensor& logits, const std::vector<double>& weights,
                          double normalizer) {
  require_defined(logits, "cross_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (weights.size() != n * k) {
    throw NumericError("cross_entropy: weight grid length " + std::to_string(weights.size()) +
                       " does not match logits " + shape_str(logits));
  }
  if (!(normalizer > 0.0)) throw NumericError("cross_entropy: normalizer must be positive");
  auto lv = logits.values();
  std::vector<double> probs(n * k);
  std::vector<double> row_weight(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = lv.data() + i * k;
    double mx = x[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(x[j] - mx);
      sum += probs[i * k + j];
    }
    const double lse = mx + std::log(sum);
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] *= inv;
      const double w = weights[i * k + j];
      if (w != 0.0) {
        row_weight[i] += w;
        total += w * (lse - x[j]);
      }
    }
  }
  Tensor out = make_op_output(1, 1, track(t, {&logits}));
  out.values()[0] = total / normalizer;
  if (out.requires_grad()) {
    auto dl = logits.storage(), dout = out.storage();
    t.push(
        [dl, dout, n, k, normalizer, p = std::move(probs), rw = std::move(row_weight),
         w = weights] {
          if (!dl->requires_grad) return;
          const double go = dout->grad[0] / normalizer;
          for (std::size_t i = 0; i < n; ++i) {
            double* g = dl->grad.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) {
              g[j] += go * (rw[i] * p[i * k + j] - w[i * k + j]);
            }
          }
        },
        dout);
  }
  return out;
}

Tensor slice_cols(Tape& t, const Tensor& a, std::size_t col0, std::size_t col1) {
  require_defined(a, "slice_cols");
  if (col0 >= col1 || col1 > a.cols()) {
    throw NumericError("slice_cols: range [" + std::to_string(col0) + ", " + std::to_string(col1) +
                       ") invalid for " + shape_str(a));
  }
  const std::size_t n = a.rows(), c = a.cols(), w = col1 - col0;
  Tensor out = make_op_output(n, w, track(t, {&a}));
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * c + col0, w, ov.data() + i * w);
  }
  if (out.requires_grad()) {
    auto da = a.storage(), dout = out.storage();
    t.push(
        [da, dout, n, c, w, col0] {
          if (!da->requires_grad) return;
          for (std::size_t i = 0; i < n; ++i) {
            const double* g = dout->grad.data() + i * w;
            double* ag = da->grad.data() + i * c + col0;
            for (std::size_t j = 0; j < w; ++j) ag[j] += g[j];
          }
        },
        dout);
  }
  return out;
}

Tensor transpose(Tape& t, const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out = make_op_output(c, n, track(t, {&a}));
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) ov[j * n + i] = av[i * c + j];
  }
  if (out.requires_grad()) {
    auto da = a.storage(), dout = out.storage();
    t.push(
        [da, dout, n, c] {
          if (!da->requires_grad) return;
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) da->grad[i * c + j] += dout->grad[j * n + i];
          }
        },
        dout);
  }
  return out;
}

Tensor broadcast_rows(Tape& t, const Tensor& row, std::size_t n) {
  require_defined(row, "broadcast_rows");
  if (row.rows() != 1) throw NumericError("broadcast_rows: input must be 1xC, got " + shape_str(row));
  const std::size_t c = row.cols();
  Tensor out = make_op_output(n, c, track(t, {&row}));
  auto rv = row.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(rv.data(), c, ov.data() + i * c);
  if (out.requires_grad()) {
    auto dr = row.storage(), dout = out.storage();
    t.push(
        [dr, dout, n, c] {
          if (!dr->requires_grad) return;
          for (std::size_t i = 0; i < n; ++i) {
            const double* g = dout->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dr->grad[j] += g[j];
          }
        },
        dout);
  }
  return out;
}

// ---- compositions ------------------------------------------------------------

Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(t, matmul(t, x, w), broadcast_rows(t, b, x.rows()));
}

Tensor sum_to_scalar(Tape& t, const Tensor& a) {
  Tensor ones_left = Tensor::full(1, a.rows(), 1.0);
  Tensor ones_right = Tensor::full(a.cols(), 1, 1.0);
  return matmul(t, matmul(t, ones_left, a), ones_right);
}

Tensor mean_rows(Tape& t, const Tensor& a) {
  Tensor ones = Tensor::full(1, a.rows(), 1.0 / static_cast<double>(a.rows()));
  return matmul(t, ones, a);
}

}  // namespace df
