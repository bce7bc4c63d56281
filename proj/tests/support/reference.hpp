#pragma once

// Plain-loop reference evaluation of the model, written without the tape or any
// library op. Tests compare the differentiable implementation against it.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "crash/data/video.hpp"
#include "crash/model/config.hpp"
#include "crash/model/params.hpp"

namespace ref {

using crash::diff::Tensor;
using crash::model::ModelConfig;
using crash::model::ParamStore;
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;
using Cx = std::complex<double>;

inline Vec vec(const Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline Mat mat(const Tensor& t, std::size_t rows) {
  const std::size_t cols = t.numel() / rows;
  Mat m(rows, Vec(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = t[i * cols + j];
  return m;
}

inline Mat mat(const Tensor& t) { return mat(t, t.shape()[0]); }

inline Vec vm(const Vec& x, const Mat& w) {
  Vec out(w[0].size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[k] * w[k][j];
  return out;
}

inline Mat mm(const Mat& a, const Mat& b) {
  Mat out;
  for (const Vec& row : a) out.push_back(vm(row, b));
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec softmax(const Vec& x) {
  const double m = *std::max_element(x.begin(), x.end());
  Vec e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += e[i] = std::exp(x[i] - m);
  for (double& v : e) v /= s;
  return e;
}

inline Vec mlp(const ParamStore& s, const std::string& name, const Vec& x) {
  Vec hid = plus(vm(x, mat(s.at(name + ".w1"))), vec(s.at(name + ".b1")));
  for (double& v : hid) v = std::tanh(v);
  return plus(vm(hid, mat(s.at(name + ".w2"))), vec(s.at(name + ".b2")));
}

inline Vec col_mean(const Mat& m) {
  Vec out(m[0].size(), 0.0);
  for (const Vec& r : m)
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  for (double& v : out) v /= static_cast<double>(m.size());
  return out;
}

// ---------------------------------------------------------------- objects

/// Output rows [n x d]; `attn` receives the full n x n attention matrix.
inline Mat ofa(const ParamStore& s, const Mat& objects, const Vec& hbar1, const Vec& hbar2,
               Mat* attn = nullptr) {
  const std::size_t n = objects.size(), d = objects[0].size();
  const Vec q1 = vm(mlp(s, "ofa.query", hbar1), mat(s.at("ofa.wq1")));
  const Vec q2 = vm(mlp(s, "ofa.query", hbar2), mat(s.at("ofa.wq2")));
  Mat kv;
  for (const Vec& r : objects) kv.push_back(mlp(s, "ofa.kv", r));
  const Mat K = mm(kv, mat(s.at("ofa.wk"))), V = mm(kv, mat(s.at("ofa.wv")));
  const double alpha = s.at("ofa.alpha")[0], beta = s.at("ofa.beta")[0];
  Mat Q1(n, q1), Q2(n, q2), out(n, Vec(d, 0.0)), A(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec sc(n);
    for (std::size_t j = 0; j < n; ++j)
      sc[j] = (alpha * dot(Q1[i], K[j]) + beta * dot(Q2[i], K[j])) / std::sqrt(double(d));
    A[i] = softmax(sc);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i][c] += A[i][j] * V[j][c];
  }
  if (attn) *attn = A;
  return out;
}

// ---------------------------------------------------------------- context

inline std::vector<std::vector<Cx>> dft(const std::vector<std::vector<Cx>>& f, std::size_t h,
                                        std::size_t w, double sign) {
  std::vector<std::vector<Cx>> out(f.size(), std::vector<Cx>(h * w));
  for (std::size_t j = 0; j < f.size(); ++j)
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        Cx acc = 0.0;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            acc += f[j][y * w + x] *
                   std::polar(1.0, sign * 2.0 * std::numbers::pi *
                                       (double(u * y) / double(h) + double(v * x) / double(w)));
        out[j][u * w + v] = acc;
      }
  return out;
}

/// Channel-expanded field [c][h*w].
inline Mat expand(const ParamStore& s, const ModelConfig& cfg, const Vec& fc) {
  const std::size_t c = cfg.c, d = cfg.d(), kw = cfg.kw;
  const Tensor& w = s.at("ctx.conv_w");
  const Tensor& b = s.at("ctx.conv_b");
  const long pad = static_cast<long>((kw - 1) / 2);
  Mat field(c, Vec(d, 0.0));
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < d; ++i) {
      double acc = b[j];
      for (std::size_t k = 0; k < kw; ++k) {
        const long src = static_cast<long>(i + k) - pad;
        if (src >= 0 && src < static_cast<long>(d)) acc += w[j * kw + k] * fc[src];
      }
      field[j][i] = acc;
    }
  return field;
}

struct CtxTrace {
  Mat field;                         // after expansion
  std::vector<std::vector<Cx>> gated;  // before CAB
  Vec cab_weights;
  Mat spatial;                       // real part after the inverse transform
  Vec out;
};

inline CtxTrace ctx(const ParamStore& s, const ModelConfig& cfg, const Vec& fc) {
  const std::size_t c = cfg.c, h = cfg.h, w = cfg.w, d = cfg.d();
  CtxTrace tr;
  tr.field = expand(s, cfg, fc);
  tr.spatial = tr.field;
  if (s.contains("ctx.wf_re")) {
    std::vector<std::vector<Cx>> f(c, std::vector<Cx>(d));
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < d; ++i) f[j][i] = tr.field[j][i];
    auto S = dft(f, h, w, -1.0);
    const Tensor& wr = s.at("ctx.wf_re");
    const Tensor& wi = s.at("ctx.wf_im");
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
          const std::size_t k = j * d + u * w + v;
          const std::size_t m = j * d + ((h - u) % h) * w + (w - v) % w;
          const Cx gate = 0.5 * (Cx(wr[k], wi[k]) + std::conj(Cx(wr[m], wi[m])));
          S[j][u * w + v] *= gate;
        }
    tr.gated = S;
    if (s.contains("ctx.cab.w1")) {
      Vec desc(2 * c);
      for (std::size_t j = 0; j < c; ++j) {
        double sum = 0.0, mx = -1.0;
        for (const Cx& z : S[j]) {
          const double mag = std::sqrt(std::norm(z) + 1e-12);
          sum += mag;
          mx = std::max(mx, mag);
        }
        desc[j] = sum / double(d);
        desc[c + j] = mx;
      }
      tr.cab_weights = softmax(mlp(s, "ctx.cab", desc));
      for (std::size_t j = 0; j < c; ++j)
        for (Cx& z : S[j]) z *= tr.cab_weights[j];
    }
    const auto back = dft(S, h, w, 1.0);
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < d; ++i) tr.spatial[j][i] = back[j][i].real() / double(d);
  }
  const Tensor& cw = s.at("ctx.collapse_w");
  Vec collapsed(d, s.at("ctx.collapse_b")[0]);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < c; ++j) collapsed[i] += cw[j] * tr.spatial[j][i];
  tr.out = mlp(s, "ctx.head", collapsed);
  return tr;
}

// ---------------------------------------------------------------- recurrence

inline Vec gru(const ParamStore& s, const std::string& name, const Vec& x, const Vec& hp) {
  const std::size_t dh = hp.size();
  const Vec xw = plus(vm(x, mat(s.at(name + ".w"))), vec(s.at(name + ".b")));
  const Vec hu = vm(hp, mat(s.at(name + ".u_zr")));
  Vec z(dh), r(dh), rh(dh), out(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    z[i] = sig(xw[i] + hu[i]);
    r[i] = sig(xw[dh + i] + hu[dh + i]);
    rh[i] = r[i] * hp[i];
  }
  const Vec uc = vm(rh, mat(s.at(name + ".u_h")));
  for (std::size_t i = 0; i < dh; ++i) {
    const double cand = std::tanh(xw[2 * dh + i] + uc[i]);
    out[i] = (1.0 - z[i]) * hp[i] + z[i] * cand;
  }
  return out;
}

/// One TFA layer over a window [M x d_h]; `attn` receives head-1 attention.
inline Mat tfa_block(const ParamStore& s, const std::string& layer, std::size_t heads, const Mat& H,
                     Mat* attn = nullptr) {
  const std::size_t M = H.size(), dh = H[0].size();
  Mat R(M, Vec(dh, 0.0));
  for (std::size_t j = 0; j < heads; ++j) {
    const std::string hd = layer + ".h" + std::to_string(j + 1);
    const Mat Q = mm(H, mat(s.at(hd + ".wq"))), K = mm(H, mat(s.at(hd + ".wk"))),
              V = mm(H, mat(s.at(hd + ".wv")));
    for (std::size_t a = 0; a < M; ++a) {
      Vec sc(M);
      for (std::size_t b = 0; b < M; ++b) sc[b] = dot(Q[a], K[b]) / std::sqrt(double(dh));
      const Vec p = softmax(sc);
      if (attn && j == 0) attn->push_back(p);
      for (std::size_t b = 0; b < M; ++b)
        for (std::size_t c = 0; c < dh; ++c) R[a][c] += p[b] * V[b][c];
    }
  }
  Mat out(M);
  for (std::size_t a = 0; a < M; ++a) {
    Vec dup(R[a]);
    dup.insert(dup.end(), R[a].begin(), R[a].end());
    Vec g(dh);
    for (std::size_t c = 0; c < dh; ++c) g[c] = dup[c] * sig(dup[dh + c]);
    out[a] = plus(R[a], softmax(mlp(s, layer + ".refine", g)));
  }
  return out;
}

inline Vec tfa_aggregate(const std::vector<Mat>& outs, const Vec& gamma) {
  const std::size_t M = outs[0].size(), dh = outs[0][0].size();
  Vec hbar(dh, 0.0);
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t c = 0; c < dh; ++c) {
      double acc = 0.0;
      for (std::size_t y = 0; y < outs.size(); ++y) acc += gamma[y] * outs[y][a][c];
      hbar[c] += acc / double(M);
    }
  return hbar;
}

inline Vec tfa_summary(const ParamStore& s, const ModelConfig& cfg, std::size_t block, Mat window) {
  std::vector<Mat> outs;
  const std::string b = "tfa.b" + std::to_string(block);
  for (std::size_t y = 1; y <= cfg.k; ++y) {
    window = tfa_block(s, b + ".l" + std::to_string(y), cfg.m, window);
    outs.push_back(window);
  }
  return tfa_aggregate(outs, vec(s.at(b + ".gamma")));
}

inline Mat window(const std::vector<Vec>& states, std::size_t M, std::size_t dh) {
  Mat w;
  for (std::size_t i = 0; i < M; ++i) {
    const long idx = static_cast<long>(states.size()) - static_cast<long>(M) + static_cast<long>(i);
    w.push_back(idx < 0 ? Vec(dh, 0.0) : states[idx]);
  }
  return w;
}

struct ModelTrace {
  Vec p;
  Mat hidden2;
};

inline ModelTrace model(const ParamStore& s, const ModelConfig& cfg, const crash::data::VideoSample& v) {
  const std::size_t dh = cfg.d_h;
  Vec hbar1(dh, 0.0), hbar2(dh, 0.0), h1(dh, 0.0), h2(dh, 0.0);
  std::vector<Vec> hs1, hs2;
  ModelTrace tr;
  for (const auto& f : v.frames) {
    const Mat objects = mat(f.objects);
    const Vec context = vec(f.context);
    const Mat obar = s.contains("ofa.wq1") ? ofa(s, objects, hbar1, hbar2) : objects;
    const Vec cbar = ctx(s, cfg, context).out;
    Vec x = context;
    x.insert(x.end(), cbar.begin(), cbar.end());
    const Vec om = col_mean(obar);
    x.insert(x.end(), om.begin(), om.end());
    h1 = gru(s, "gru.l1", x, h1);
    h2 = gru(s, "gru.l2", h1, h2);
    hs1.push_back(h1);
    hs2.push_back(h2);
    tr.p.push_back(sig(mlp(s, "pred", h2)[0]));
    const Mat w1 = window(hs1, cfg.M, dh), w2 = window(hs2, cfg.M, dh);
    if (s.contains("tfa.b1.gamma")) {
      hbar1 = tfa_summary(s, cfg, 1, w1);
      hbar2 = tfa_summary(s, cfg, 2, w2);
    } else {
      hbar1 = col_mean(w1);
      hbar2 = col_mean(w2);
    }
  }
  tr.hidden2 = hs2;
  return tr;
}

// ---------------------------------------------------------------- losses

inline double enhancement(const ParamStore& s, const ModelConfig& cfg, const Mat& hidden2) {
  const std::size_t T = hidden2.size(), dh = hidden2[0].size();
  Mat x = hidden2;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < dh; ++i) {
      const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(dh));
      x[t][i] += (i % 2 == 0) ? std::sin(double(t) * freq) : std::cos(double(t) * freq);
    }
  Mat cat(T);
  for (std::size_t j = 0; j < cfg.m_e; ++j) {
    const std::string hd = "enh.h" + std::to_string(j + 1);
    const Mat Q = mm(x, mat(s.at(hd + ".wq"))), K = mm(x, mat(s.at(hd + ".wk"))),
              V = mm(x, mat(s.at(hd + ".wv")));
    for (std::size_t a = 0; a < T; ++a) {
      Vec sc(T);
      for (std::size_t b = 0; b < T; ++b) sc[b] = dot(Q[a], K[b]) / std::sqrt(double(dh));
      const Vec p = softmax(sc);
      Vec head(dh, 0.0);
      for (std::size_t b = 0; b < T; ++b)
        for (std::size_t c = 0; c < dh; ++c) head[c] += p[b] * V[b][c];
      cat[a].insert(cat[a].end(), head.begin(), head.end());
    }
  }
  const Vec pooled = col_mean(mm(cat, mat(s.at("enh.wo"))));
  return sig(mlp(s, "enh.out", pooled)[0]);
}

inline double clampp(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

inline double anticipation(const Vec& p, const crash::data::VideoSample& v) {
  double l = 0.0;
  for (std::size_t t = 1; t <= p.size(); ++t) {
    if (v.label == 1) {
      const double lead = std::max((double(v.tau) - double(t)) / v.fps, 0.0);
      l -= std::exp(-lead / 2.0) * std::log(clampp(p[t - 1]));
    } else {
      l -= std::log(1.0 - clampp(p[t - 1]));
    }
  }
  return l;
}

inline double bce(double p, int label) {
  return label == 1 ? -std::log(clampp(p)) : -std::log(1.0 - clampp(p));
}

}  // namespace ref
