#include "malfuse/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "malfuse/error.hpp"
#include "malfuse/io.hpp"
#include "malfuse/nn/loss.hpp"

namespace malfuse {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kTau = 1e-12;

bool in_up(int y, double a, double C) { return (y > 0 && a < C) || (y < 0 && a > 0); }
bool in_low(int y, double a, double C) { return (y > 0 && a > 0) || (y < 0 && a < C); }

// Gradient of the dual, G = Q alpha - e.
VectorXd dual_gradient(const MatrixXd& K, std::span<const int> y, const VectorXd& alpha) {
  const auto n = static_cast<Index>(y.size());
  VectorXd ya(n), yv(n);
  for (Index i = 0; i < n; ++i) {
    yv[i] = y[static_cast<std::size_t>(i)];
    ya[i] = yv[i] * alpha[i];
  }
  return yv.cwiseProduct(K * ya) - VectorXd::Ones(n);
}

void check_labels(std::span<const int> y) {
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == -1) neg = true;
    else throw Error(ErrorKind::ShapeMismatch, "binary labels must be +1 or -1");
  }
  if (!pos || !neg) throw Error(ErrorKind::SingleClassInput, "binary SVM needs both labels");
}

}  // namespace

std::string Kernel::to_string() const {
  return type == KernelType::Linear ? "linear" : "rbf gamma=" + io::format_real(gamma);
}

Kernel Kernel::parse(std::string_view text) {
  const auto t = io::trim(text);
  if (t == "linear") return linear();
  constexpr std::string_view prefix = "rbf gamma=";
  if (t.substr(0, prefix.size()) == prefix) {
    const double g = io::parse_real(t.substr(prefix.size()));
    if (!(g > 0)) throw Error(ErrorKind::ConfigError, "rbf gamma must be positive");
    return rbf(g);
  }
  throw Error(ErrorKind::ConfigError, "unknown kernel '" + std::string(t) + "'");
}

double kernel_eval(const Kernel& k, const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& y) {
  if (x.size() != y.size()) throw_width_mismatch(y.size(), x.size());
  if (k.type == KernelType::Linear) return x.dot(y);
  return std::exp(-k.gamma * (x - y).squaredNorm());
}

KernelCache::KernelCache(const MatrixXd& X, const Kernel& kernel, std::size_t budget_bytes)
    : x_(X), kernel_(kernel), sq_norms_(X.rowwise().squaredNorm()), diag_(X.rows()) {
  for (Index i = 0; i < X.rows(); ++i) diag_[i] = kernel.type == KernelType::Linear ? sq_norms_[i] : 1.0;
  const std::size_t row_bytes = std::max<std::size_t>(1, static_cast<std::size_t>(X.rows()) * sizeof(double));
  capacity_ = std::max<std::size_t>(2, budget_bytes / row_bytes);
}

const VectorXd& KernelCache::row(Index i) {
  if (auto it = where_.find(i); it != where_.end()) {
    ++hits_;
    lru_.splice(lru_.begin(), lru_, it->second);
    return lru_.front().second;
  }
  ++misses_;
  VectorXd r = x_ * x_.row(i).transpose();
  if (kernel_.type == KernelType::Rbf)
    r = (-kernel_.gamma * ((sq_norms_.array() + sq_norms_[i] - 2 * r.array()).max(0.0))).exp().matrix();
  if (lru_.size() >= capacity_) {
    where_.erase(lru_.back().first);
    lru_.pop_back();
  }
  lru_.emplace_front(i, std::move(r));
  where_[i] = lru_.begin();
  return lru_.front().second;
}

double BinarySvmModel::decision(const Eigen::Ref<const VectorXd>& x) const {
  if (support_vectors.rows() > 0 && x.size() != support_vectors.cols())
    throw_width_mismatch(x.size(), support_vectors.cols());
  double s = bias;
  for (Index k = 0; k < support_vectors.rows(); ++k)
    s += coefficients[k] * kernel_eval(kernel, support_vectors.row(k).transpose(), x);
  return s;
}

VectorXd BinarySvmModel::decisions(const MatrixXd& X) const {
  if (support_vectors.rows() > 0 && X.cols() != support_vectors.cols())
    throw_width_mismatch(X.cols(), support_vectors.cols());
  if (support_vectors.rows() == 0) return VectorXd::Constant(X.rows(), bias);
  MatrixXd k = X * support_vectors.transpose();
  if (kernel.type == KernelType::Rbf) {
    const VectorXd xn = X.rowwise().squaredNorm();
    const VectorXd sn = support_vectors.rowwise().squaredNorm();
    for (Index c = 0; c < k.cols(); ++c)
      k.col(c) = (-kernel.gamma * ((xn.array() + sn[c] - 2 * k.col(c).array()).max(0.0))).exp().matrix();
  }
  return (k * coefficients).array() + bias;
}

BinarySvmModel train_binary_svm(const MatrixXd& X, std::span<const int> y, const SvmParams& params) {
  KernelCache cache(X, params.kernel, params.cache_bytes);
  return train_binary_svm(X, y, params, cache);
}

BinarySvmModel train_binary_svm(const MatrixXd& X, std::span<const int> y, const SvmParams& params,
                                KernelCache& cache) {
  if (X.rows() != static_cast<Index>(y.size())) throw Error(ErrorKind::ShapeMismatch, "rows vs labels");
  if (!(params.C > 0)) throw Error(ErrorKind::ConfigError, "SVM C must be positive");
  if (params.kernel.type == KernelType::Rbf && !(params.kernel.gamma > 0))
    throw Error(ErrorKind::ConfigError, "rbf gamma must be positive");
  check_labels(y);

  const Index n = X.rows();
  const double C = params.C;
  auto Y = [&](Index t) { return static_cast<double>(y[static_cast<std::size_t>(t)]); };
  VectorXd alpha = VectorXd::Zero(n), G = VectorXd::Constant(n, -1.0), Ki(n);
  SmoDiagnostics diag;

  for (;;) {
    double gmax = -std::numeric_limits<double>::infinity();
    Index i = -1;
    for (Index t = 0; t < n; ++t)
      if (in_up(y[static_cast<std::size_t>(t)], alpha[t], C) && -Y(t) * G[t] >= gmax) {
        gmax = -Y(t) * G[t];
        i = t;
      }
    if (i < 0) {
      diag.converged = true;
      diag.max_violation = 0;
      break;
    }
    Ki = cache.row(i);
    double gmax2 = -std::numeric_limits<double>::infinity(), best = std::numeric_limits<double>::infinity();
    Index j = -1;
    for (Index t = 0; t < n; ++t) {
      if (!in_low(y[static_cast<std::size_t>(t)], alpha[t], C)) continue;
      gmax2 = std::max(gmax2, Y(t) * G[t]);
      const double b = gmax + Y(t) * G[t];
      if (b > 0) {
        double a = cache.diagonal(i) + cache.diagonal(t) - 2 * Ki[t];
        if (a <= 0) a = kTau;
        const double obj = -(b * b) / a;
        if (obj <= best) {
          best = obj;
          j = t;
        }
      }
    }
    diag.max_violation = gmax + gmax2;
    if (diag.max_violation < params.tolerance || j < 0) {
      diag.converged = true;
      break;
    }
    if (diag.iterations >= params.max_iterations) break;
    ++diag.iterations;

    const VectorXd& Kj = cache.row(j);
    const double old_i = alpha[i], old_j = alpha[j];
    double quad = cache.diagonal(i) + cache.diagonal(j) - 2 * Ki[j];
    if (quad <= 0) quad = kTau;
    if (Y(i) != Y(j)) {
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) alpha[j] = 0, alpha[i] = diff;
      } else if (alpha[i] < 0) {
        alpha[i] = 0, alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) alpha[i] = C, alpha[j] = C - diff;
      } else if (alpha[j] > C) {
        alpha[j] = C, alpha[i] = C + diff;
      }
    } else {
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) alpha[i] = C, alpha[j] = sum - C;
      } else if (alpha[j] < 0) {
        alpha[j] = 0, alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) alpha[j] = C, alpha[i] = sum - C;
      } else if (alpha[i] < 0) {
        alpha[i] = 0, alpha[j] = sum;
      }
    }
    const double di = (alpha[i] - old_i) * Y(i), dj = (alpha[j] - old_j) * Y(j);
    for (Index t = 0; t < n; ++t) G[t] += Y(t) * (Ki[t] * di + Kj[t] * dj);
  }

  // Bias from free vectors, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0;
  Index n_free = 0;
  for (Index t = 0; t < n; ++t) {
    const double yg = Y(t) * G[t];
    if (alpha[t] >= C) {
      if (Y(t) < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (Y(t) > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2;

  BinarySvmModel m;
  m.kernel = params.kernel;
  m.bias = -rho;
  m.alpha = alpha;
  double objective = 0;
  for (Index t = 0; t < n; ++t) {
    objective += 0.5 * alpha[t] * (G[t] - 1.0);
    if (alpha[t] > 0) m.support_indices.push_back(t);
  }
  diag.dual_objective = objective;
  m.diagnostics = diag;
  m.support_vectors.resize(static_cast<Index>(m.support_indices.size()), X.cols());
  m.coefficients.resize(static_cast<Index>(m.support_indices.size()));
  for (std::size_t k = 0; k < m.support_indices.size(); ++k) {
    const Index t = m.support_indices[k];
    m.support_vectors.row(static_cast<Index>(k)) = X.row(t);
    m.coefficients[static_cast<Index>(k)] = alpha[t] * Y(t);
  }
  return m;
}

double svm_dual_objective(const MatrixXd& K, std::span<const int> y, const VectorXd& alpha) {
  const VectorXd G = dual_gradient(K, y, alpha);
  // 0.5 a'Qa - e'a = 0.5 a'(G + e) - e'a
  return 0.5 * alpha.dot(G - VectorXd::Ones(alpha.size()));
}

double svm_kkt_violation(const MatrixXd& K, std::span<const int> y, const VectorXd& alpha, double C) {
  const VectorXd G = dual_gradient(K, y, alpha);
  double up = -std::numeric_limits<double>::infinity(), low = up;
  for (Index t = 0; t < alpha.size(); ++t) {
    const int yt = y[static_cast<std::size_t>(t)];
    if (in_up(yt, alpha[t], C)) up = std::max(up, -yt * G[t]);
    if (in_low(yt, alpha[t], C)) low = std::max(low, yt * G[t]);
  }
  if (!std::isfinite(up) || !std::isfinite(low)) return 0.0;
  return std::max(0.0, up + low);
}

double PlattParams::probability(double f) const {
  const double z = f * A + B;
  return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

PlattParams fit_platt(std::span<const double> dec, std::span<const int> positive) {
  if (dec.size() != positive.size()) throw Error(ErrorKind::ShapeMismatch, "decision values vs targets");
  const std::size_t n = dec.size();
  double prior1 = 0, prior0 = 0;
  for (int p : positive) (p ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1) / (prior1 + 2), lo = 1 / (prior0 + 2);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = positive[i] ? hi : lo;

  PlattParams p{0.0, std::log((prior0 + 1) / (prior1 + 1))};
  auto objective = [&](double A, double B) {
    double f = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = dec[i] * A + B;
      f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1) * z + std::log1p(std::exp(z));
    }
    return f;
  };
  double fval = objective(p.A, p.B);
  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10, kSigma = 1e-12, kEps = 1e-5;
  for (int it = 0; it < kMaxIter; ++it) {
    double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = dec[i] * p.A + p.B;
      double pp, q;
      if (z >= 0) {
        pp = std::exp(-z) / (1 + std::exp(-z));
        q = 1 / (1 + std::exp(-z));
      } else {
        pp = 1 / (1 + std::exp(z));
        q = std::exp(z) / (1 + std::exp(z));
      }
      const double d2 = pp * q;
      h11 += dec[i] * dec[i] * d2;
      h22 += d2;
      h21 += dec[i] * d2;
      const double d1 = t[i] - pp;
      g1 += dec[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < kEps && std::abs(g2) < kEps) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det, dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1;
    while (step >= kMinStep) {
      const double nA = p.A + step * dA, nB = p.B + step * dB;
      const double nf = objective(nA, nB);
      if (nf < fval + 0.0001 * step * gd) {
        p = {nA, nB};
        fval = nf;
        break;
      }
      step /= 2;
    }
    if (step < kMinStep) break;
  }
  return p;
}

MulticlassSvmModel train_multiclass_svm(const MatrixXd& X, std::span<const int> labels, const SvmParams& params,
                                        int num_classes, const MatrixXd* calib_X, std::span<const int> calib_labels) {
  if (X.rows() != static_cast<Index>(labels.size())) throw Error(ErrorKind::ShapeMismatch, "rows vs labels");
  std::vector<std::size_t> present(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw Error(ErrorKind::UnknownClass, "label " + std::to_string(l));
    ++present[static_cast<std::size_t>(l)];
  }
  if (std::count_if(present.begin(), present.end(), [](auto c) { return c > 0; }) < 2)
    throw Error(ErrorKind::SingleClassInput, "multiclass SVM needs at least two classes");

  MulticlassSvmModel m;
  m.num_classes = num_classes;
  m.trained.assign(static_cast<std::size_t>(num_classes), false);
  m.machines.resize(static_cast<std::size_t>(num_classes));
  m.calibration.resize(static_cast<std::size_t>(num_classes));
  KernelCache cache(X, params.kernel, params.cache_bytes);  // shared: the kernel does not depend on the class
  std::vector<int> y(labels.size());
  for (int c = 0; c < num_classes; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (present[cu] == 0 || present[cu] == labels.size()) continue;
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == c ? 1 : -1;
    m.machines[cu] = train_binary_svm(X, y, params, cache);
    m.trained[cu] = true;
  }

  const MatrixXd& cx = calib_X ? *calib_X : X;
  const std::span<const int> cl = calib_X ? calib_labels : labels;
  if (cx.rows() != static_cast<Index>(cl.size())) throw Error(ErrorKind::ShapeMismatch, "calibration rows vs labels");
  if (cx.rows() > 0) {
    for (int c = 0; c < num_classes; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      if (!m.trained[cu]) continue;
      const VectorXd f = m.machines[cu].decisions(cx);
      std::vector<int> pos(cl.size());
      for (std::size_t i = 0; i < cl.size(); ++i) pos[i] = cl[i] == c;
      m.calibration[cu] = fit_platt(std::span<const double>(f.data(), static_cast<std::size_t>(f.size())), pos);
    }
    m.calibrated = true;
  }
  return m;
}

SvmPrediction svm_predict(const MulticlassSvmModel& model, const MatrixXd& X, bool calibrated) {
  const Index n = X.rows(), k = model.num_classes;
  SvmPrediction p;
  p.decisions = MatrixXd::Constant(n, k, -std::numeric_limits<double>::infinity());
  for (Index c = 0; c < k; ++c)
    if (model.trained[static_cast<std::size_t>(c)]) p.decisions.col(c) = model.machines[static_cast<std::size_t>(c)].decisions(X);
  p.probabilities = MatrixXd::Zero(n, k);
  for (Index i = 0; i < n; ++i) {
    if (calibrated && model.calibrated) {
      for (Index c = 0; c < k; ++c)
        if (model.trained[static_cast<std::size_t>(c)])
          p.probabilities(i, c) = model.calibration[static_cast<std::size_t>(c)].probability(p.decisions(i, c));
    } else {
      const double top = p.decisions.row(i).maxCoeff();
      for (Index c = 0; c < k; ++c)
        if (model.trained[static_cast<std::size_t>(c)]) p.probabilities(i, c) = std::exp(p.decisions(i, c) - top);
    }
    const double s = p.probabilities.row(i).sum();
    if (s > 0) p.probabilities.row(i) /= s;
    else p.probabilities.row(i).setConstant(1.0 / static_cast<double>(k));
  }
  p.classes.resize(n);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index c = 1; c < k; ++c)
      if (p.probabilities(i, c) > p.probabilities(i, best)) best = c;
    p.classes[i] = static_cast<int>(best);
  }
  return p;
}

void write_svm_model(const MulticlassSvmModel& model, const std::filesystem::path& path) {
  std::vector<std::string> lines{"svm-ovr 1", "classes " + std::to_string(model.num_classes),
                                 "calibrated " + std::to_string(model.calibrated ? 1 : 0)};
  for (int c = 0; c < model.num_classes; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const auto& mm = model.machines[cu];
    if (!model.trained[cu]) {
      lines.push_back("class " + std::to_string(c) + " untrained");
      continue;
    }
    lines.push_back("class " + std::to_string(c) + " kernel=" + mm.kernel.to_string());
    lines.push_back("bias " + io::format_real(mm.bias) + " platt " + io::format_real(model.calibration[cu].A) + " " +
                    io::format_real(model.calibration[cu].B));
    lines.push_back("vectors " + std::to_string(mm.support_vectors.rows()) + " " +
                    std::to_string(mm.support_vectors.cols()));
    for (Index k = 0; k < mm.support_vectors.rows(); ++k) {
      std::string line = io::format_real(mm.coefficients[k]);
      for (Index d = 0; d < mm.support_vectors.cols(); ++d) line += " " + io::format_real(mm.support_vectors(k, d));
      lines.push_back(std::move(line));
    }
  }
  io::write_lines(path, lines);
}

MulticlassSvmModel read_svm_model(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::size_t at = 0;
  auto next = [&]() -> std::vector<std::string_view> {
    if (at >= lines.size()) throw Error(ErrorKind::IoFailure, path.string() + ": truncated SVM model");
    return io::split_whitespace(lines[at++]);
  };
  auto expect = [&](const std::vector<std::string_view>& f, std::string_view key, std::size_t n) {
    if (f.size() != n || f[0] != key)
      throw Error(ErrorKind::IoFailure, path.string() + ": expected '" + std::string(key) + "' at line " +
                                            std::to_string(at));
  };
  auto head = next();
  expect(head, "svm-ovr", 2);
  auto cls = next();
  expect(cls, "classes", 2);
  MulticlassSvmModel m;
  m.num_classes = static_cast<int>(io::parse_int(cls[1]));
  auto cal = next();
  expect(cal, "calibrated", 2);
  m.calibrated = io::parse_int(cal[1]) != 0;
  m.trained.assign(static_cast<std::size_t>(m.num_classes), false);
  m.machines.resize(static_cast<std::size_t>(m.num_classes));
  m.calibration.resize(static_cast<std::size_t>(m.num_classes));
  for (int c = 0; c < m.num_classes; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (at >= lines.size()) throw Error(ErrorKind::IoFailure, path.string() + ": truncated SVM model");
    const std::string& header = lines[at++];
    const std::string untrained = "class " + std::to_string(c) + " untrained";
    if (header == untrained) continue;
    const std::string prefix = "class " + std::to_string(c) + " kernel=";
    if (header.rfind(prefix, 0) != 0) throw Error(ErrorKind::IoFailure, path.string() + ": bad class header");
    auto& mm = m.machines[cu];
    mm.kernel = Kernel::parse(std::string_view(header).substr(prefix.size()));
    auto b = next();
    expect(b, "bias", 5);
    mm.bias = io::parse_real(b[1]);
    m.calibration[cu] = {io::parse_real(b[3]), io::parse_real(b[4])};
    auto v = next();
    expect(v, "vectors", 3);
    const auto rows = io::parse_int(v[1]), cols = io::parse_int(v[2]);
    mm.support_vectors.resize(rows, cols);
    mm.coefficients.resize(rows);
    for (Index k = 0; k < rows; ++k) {
      auto f = next();
      if (static_cast<long long>(f.size()) != cols + 1) throw Error(ErrorKind::IoFailure, path.string() + ": bad vector");
      mm.coefficients[k] = io::parse_real(f[0]);
      for (Index d = 0; d < cols; ++d) mm.support_vectors(k, d) = io::parse_real(f[static_cast<std::size_t>(d + 1)]);
    }
    m.trained[cu] = true;
  }
  return m;
}

std::vector<BaselineRow> grid_baseline_eval(const FeatureTable& raw, std::span<const SplitAssignment> splits) {
  struct Setting {
    std::string name;
    SvmParams params;
  };
  std::vector<Setting> settings(2);
  settings[0].name = "LINEAR-SVM";
  settings[0].params.C = 1;
  settings[0].params.kernel = Kernel::linear();
  settings[1].name = "RBF-SVM";
  settings[1].params.C = 10;
  settings[1].params.kernel = Kernel::rbf(0.1);

  std::vector<BaselineRow> rows(settings.size());
  for (std::size_t s = 0; s < settings.size(); ++s) rows[s].name = settings[s].name;
  for (const auto& split : splits) {
    const auto train = raw.select_rows(split.ids(Partition::Train));
    const auto val = raw.select_rows(split.ids(Partition::Val));
    const auto test = raw.select_rows(split.ids(Partition::Test));
    const auto norm = minmax_fit(train.values);
    const MatrixXd xt = minmax_apply(norm, train.values), xv = minmax_apply(norm, val.values),
                   xs = minmax_apply(norm, test.values);
    for (std::size_t s = 0; s < settings.size(); ++s) {
      const auto model = train_multiclass_svm(xt, train.labels, settings[s].params, 9, &xv, val.labels);
      const auto pred = svm_predict(model, xs);
      rows[s].log_loss.push_back(nn::multiclass_log_loss(pred.probabilities, test.labels));
      rows[s].accuracy.push_back(nn::argmax_accuracy(pred.probabilities, test.labels));
    }
  }
  for (auto& r : rows) {
    r.log_loss_stats = mean_std(r.log_loss);
    r.accuracy_stats = mean_std(r.accuracy);
  }
  return rows;
}

}  // namespace malfuse
