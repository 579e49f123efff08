#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimdp/group.hpp"
#include "pimdp/rng.hpp"

namespace pimdp {

// Dense network with rectifier hidden layers and a linear output, double
// precision throughout. Batches are row-major: one sample per row.
struct Mlp {
  std::vector<Eigen::MatrixXd> w;  // layer l: in x out
  std::vector<Eigen::VectorXd> b;

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer (post-activation)
  };

  struct Grads {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;

    void setZero() {
      for (auto& m : dw) m.setZero();
      for (auto& v : db) v.setZero();
    }
    Grads& operator+=(const Grads& o) {
      for (std::size_t i = 0; i < dw.size(); ++i) {
        dw[i] += o.dw[i];
        db[i] += o.db[i];
      }
      return *this;
    }
    Grads& operator*=(double c) {
      for (std::size_t i = 0; i < dw.size(); ++i) {
        dw[i] *= c;
        db[i] *= c;
      }
      return *this;
    }
  };

  int in_dim() const { return static_cast<int>(w.front().rows()); }
  int out_dim() const { return static_cast<int>(w.back().cols()); }
  std::size_t n_layers() const { return w.size(); }

  // Fan-in-scaled uniform init.
  static Mlp make(const std::vector<int>& widths, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
    Mlp net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int fan_in = widths[l];
      const double bound = std::sqrt(6.0 / fan_in);
      Eigen::MatrixXd wl(widths[l], widths[l + 1]);
      for (int i = 0; i < wl.rows(); ++i)
        for (int j = 0; j < wl.cols(); ++j) wl(i, j) = rng.uniform(-bound, bound);
      net.w.push_back(std::move(wl));
      net.b.push_back(Eigen::VectorXd::Zero(widths[l + 1]));
    }
    return net;
  }

  Grads zero_grads() const {
    Grads g;
    for (std::size_t l = 0; l < w.size(); ++l) {
      g.dw.push_back(Eigen::MatrixXd::Zero(w[l].rows(), w[l].cols()));
      g.db.push_back(Eigen::VectorXd::Zero(b[l].size()));
    }
    return g;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const {
    if (x.cols() != w.front().rows()) throw std::invalid_argument("Mlp::forward: shape mismatch");
    Eigen::MatrixXd h = x;
    if (cache) cache->inputs.clear();
    for (std::size_t l = 0; l < w.size(); ++l) {
      if (cache) cache->inputs.push_back(h);
      h = (h * w[l]).rowwise() + b[l].transpose();
      if (l + 1 < w.size()) h = h.cwiseMax(0.0);
    }
    return h;
  }

  // Exact reverse-mode gradients; dy is the loss gradient at the output.
  // Returns parameter gradients; optionally also the gradient at the input.
  Grads backward(const Cache& cache, const Eigen::MatrixXd& dy,
                 Eigen::MatrixXd* dx = nullptr) const {
    if (cache.inputs.size() != w.size()) throw std::invalid_argument("Mlp::backward: stale cache");
    Grads g = zero_grads();
    Eigen::MatrixXd grad = dy;
    for (int l = static_cast<int>(w.size()) - 1; l >= 0; --l) {
      const Eigen::MatrixXd& in = cache.inputs[l];
      if (l + 1 < static_cast<int>(w.size())) {
        // Rectifier mask of this layer's *output*, which is the next layer's
        // cached input.
        const Eigen::MatrixXd& post = cache.inputs[l + 1];
        grad = grad.cwiseProduct((post.array() > 0.0).cast<double>().matrix());
      }
      g.dw[l] = in.transpose() * grad;
      g.db[l] = grad.colwise().sum();
      if (l > 0 || dx) grad = grad * w[l].transpose();
    }
    if (dx) *dx = grad;
    return g;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < w.size(); ++l) {
      out.insert(out.end(), w[l].data(), w[l].data() + w[l].size());
      out.insert(out.end(), b[l].data(), b[l].data() + b[l].size());
    }
    return out;
  }

  bool finite() const {
    for (const auto& m : w)
      if (!m.allFinite()) return false;
    for (const auto& v : b)
      if (!v.allFinite()) return false;
    return true;
  }
};

inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  for (std::size_t l = 0; l < target.w.size(); ++l) {
    target.w[l] = (1.0 - tau) * target.w[l] + tau * online.w[l];
    target.b[l] = (1.0 - tau) * target.b[l] + tau * online.b[l];
  }
}

// Standard Adam with optional global-norm gradient clipping.
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  static Adam make(const Mlp& net, double lr) {
    Adam a;
    a.lr = lr;
    for (std::size_t l = 0; l < net.w.size(); ++l) {
      a.mw.push_back(Eigen::MatrixXd::Zero(net.w[l].rows(), net.w[l].cols()));
      a.vw.push_back(Eigen::MatrixXd::Zero(net.w[l].rows(), net.w[l].cols()));
      a.mb.push_back(Eigen::VectorXd::Zero(net.b[l].size()));
      a.vb.push_back(Eigen::VectorXd::Zero(net.b[l].size()));
    }
    return a;
  }

  // clip_norm <= 0 disables clipping.
  void step(Mlp& net, Mlp::Grads grads, double clip_norm = 0.0) {
    double sq = 0.0;
    for (std::size_t l = 0; l < grads.dw.size(); ++l)
      sq += grads.dw[l].squaredNorm() + grads.db[l].squaredNorm();
    if (!std::isfinite(sq)) throw std::runtime_error("Adam: non-finite gradients");
    if (clip_norm > 0.0) {
      const double norm = std::sqrt(sq);
      if (norm > clip_norm) grads *= clip_norm / norm;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t l = 0; l < grads.dw.size(); ++l) {
      mw[l] = beta1 * mw[l] + (1.0 - beta1) * grads.dw[l];
      vw[l] = beta2 * vw[l] + (1.0 - beta2) * grads.dw[l].cwiseProduct(grads.dw[l]);
      mb[l] = beta1 * mb[l] + (1.0 - beta1) * grads.db[l];
      vb[l] = beta2 * vb[l] + (1.0 - beta2) * grads.db[l].cwiseProduct(grads.db[l]);
      net.w[l] -= lr * (mw[l] / c1).cwiseQuotient(((vw[l] / c2).cwiseSqrt().array() + eps).matrix());
      net.b[l] -= lr * (mb[l] / c1).cwiseQuotient(((vb[l] / c2).cwiseSqrt().array() + eps).matrix());
    }
  }
};

// Equivariant wrapper via output-side Reynolds averaging:
//   f(x) = (1/|G|) sum_g out_rep(g)^-1 base(in_rep(g) x).
// The result satisfies f(in_rep(g) x) = out_rep(g) f(x) for every g.
struct EquivariantFn {
  Mlp base;
  LinearAction action;
  std::vector<Eigen::MatrixXd> out_rep_inv;  // precomputed inverses

  struct Cache {
    std::vector<Mlp::Cache> per_element;
  };

  static EquivariantFn make(Mlp base, LinearAction act) {
    EquivariantFn f;
    f.base = std::move(base);
    f.action = std::move(act);
    for (const auto& m : f.action.out_rep) f.out_rep_inv.push_back(m.inverse());
    return f;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const {
    const int n = action.group.order;
    if (cache) cache->per_element.assign(n, {});
    Eigen::MatrixXd out;
    for (int g = 0; g < n; ++g) {
      const Eigen::MatrixXd xg = x * action.in_rep[g].transpose();
      const Eigen::MatrixXd yg =
          base.forward(xg, cache ? &cache->per_element[g] : nullptr) *
          out_rep_inv[g].transpose();
      if (g == 0)
        out = yg;
      else
        out += yg;
    }
    return out / static_cast<double>(n);
  }

  // Chain rule: each orbit element contributes its back-propagated gradient,
  // averaged with the same weights as the forward pass.
  Mlp::Grads backward(const Cache& cache, const Eigen::MatrixXd& dy) const {
    const int n = action.group.order;
    Mlp::Grads total = base.zero_grads();
    for (int g = 0; g < n; ++g) {
      const Eigen::MatrixXd dyg = dy * out_rep_inv[g];
      total += base.backward(cache.per_element[g], dyg);
    }
    total *= 1.0 / static_cast<double>(n);
    return total;
  }
};

// Fixed-capacity ring buffer of transitions with uniform sampling.
struct ReplayBuffer {
  struct Transition {
    Eigen::VectorXd obs;
    Eigen::VectorXd action;  // one element for discrete actions
    double reward = 0.0;
    Eigen::VectorXd next_obs;
    bool terminal = false;
  };

  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }

  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    std::vector<std::size_t> idx(batch);
    for (std::size_t i = 0; i < batch; ++i)
      idx[i] = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(data_.size())));
    return idx;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

// --- Checkpoint blobs ---------------------------------------------------------
//
// Layout: a one-line JSON-style header (widths) terminated by '\n', then the
// flat little-endian parameter doubles.

inline void write_mlp(std::ostream& os, const Mlp& net) {
  std::string header = "{\"widths\":[";
  header += std::to_string(net.w.front().rows());
  for (const auto& wl : net.w) header += "," + std::to_string(wl.cols());
  header += "]}\n";
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    os.write(reinterpret_cast<const char*>(net.w[l].data()),
             static_cast<std::streamsize>(net.w[l].size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(net.b[l].data()),
             static_cast<std::streamsize>(net.b[l].size() * sizeof(double)));
  }
}

inline Mlp read_mlp(std::istream& is) {
  std::string header;
  std::getline(is, header);
  std::vector<int> widths;
  const auto open = header.find('[');
  const auto close = header.find(']');
  if (open == std::string::npos || close == std::string::npos)
    throw std::runtime_error("read_mlp: malformed header");
  std::string list = header.substr(open + 1, close - open - 1);
  for (auto& c : list)
    if (c == ',') c = ' ';
  std::istringstream ls(list);
  int wdt;
  while (ls >> wdt) widths.push_back(wdt);
  Mlp net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Eigen::MatrixXd wl(widths[l], widths[l + 1]);
    Eigen::VectorXd bl(widths[l + 1]);
    is.read(reinterpret_cast<char*>(wl.data()),
            static_cast<std::streamsize>(wl.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(bl.data()),
            static_cast<std::streamsize>(bl.size() * sizeof(double)));
    net.w.push_back(std::move(wl));
    net.b.push_back(std::move(bl));
  }
  if (!is) throw std::runtime_error("read_mlp: truncated blob");
  return net;
}

}  // namespace pimdp
