#include "upmt/attention_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "upmt/corpus.hpp"
#include "upmt/error.hpp"
#include "upmt/text.hpp"

namespace upmt {

namespace {

using Mat = AttentionModel::Matrix;
using RowVec = Eigen::RowVectorXd;
using MapMat = Eigen::Map<Mat>;
using MapConstMat = Eigen::Map<const Mat>;
using MapConstRow = Eigen::Map<const RowVec>;
using MapRow = Eigen::Map<RowVec>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

Mat layer_norm(const Mat& x, const double* gain, const double* bias, LnCache& cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  const MapConstRow g(gain, d);
  const MapConstRow b(bias, d);
  Mat y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
    y.row(i) = cache.xhat.row(i).cwiseProduct(g) + b;
  }
  return y;
}

RowVec layer_norm_row(const RowVec& x, const double* gain, const double* bias) {
  const auto d = x.size();
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  return ((x.array() - mean) * rstd).matrix().cwiseProduct(MapConstRow(gain, d)) + MapConstRow(bias, d);
}

Mat layer_norm_backward(const Mat& dy, const LnCache& cache, const double* gain, double* dgain, double* dbias) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  const MapConstRow g(gain, d);
  MapRow dg(dgain, d);
  MapRow db(dbias, d);
  dg += dy.cwiseProduct(cache.xhat).colwise().sum();
  db += dy.colwise().sum();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVec dxhat = dy.row(i).cwiseProduct(g);
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

void log_softmax_rows(Mat& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    logits.row(i).array() -= lse;
  }
}

struct LayerCache {
  LnCache ln1, ln2;
  Mat a, q, k, v, o, h2, f, u, g;
  std::vector<Mat> p;
};

}  // namespace

// ---------------------------------------------------------------------------
// Construction and checkpoints
// ---------------------------------------------------------------------------

std::size_t AttentionModel::add_tensor(const std::string& name, int rows, int cols) {
  const std::size_t offset = params_.size();
  tensors_.push_back({name, rows, cols, offset});
  params_.resize(offset + static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  return offset;
}

AttentionModel::AttentionModel(AttentionConfig config) : config_(config) {
  const auto& c = config_;
  if (c.d_model < 1 || c.layers < 1 || c.heads < 1 || c.d_model % c.heads != 0 || c.window < 2 || c.memory < 0) {
    throw Error(ErrorCode::InvalidArgument, "bad attention model configuration");
  }
  const int d = c.d_model;
  const int C = Vocabulary::size();
  embedding_ = add_tensor("embedding", C, d);
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.ln1_g = add_tensor(p + "ln1.gain", 1, d);
    s.ln1_b = add_tensor(p + "ln1.bias", 1, d);
    s.wq = add_tensor(p + "wq", d, d);
    s.wk = add_tensor(p + "wk", d, d);
    s.wv = add_tensor(p + "wv", d, d);
    s.wo = add_tensor(p + "wo", d, d);
    s.bo = add_tensor(p + "bo", 1, d);
    s.rel = add_tensor(p + "rel_bias", c.heads, rel_span());
    s.ln2_g = add_tensor(p + "ln2.gain", 1, d);
    s.ln2_b = add_tensor(p + "ln2.bias", 1, d);
    s.w1 = add_tensor(p + "w1", d, ffn_width());
    s.b1 = add_tensor(p + "b1", 1, ffn_width());
    s.w2 = add_tensor(p + "w2", ffn_width(), d);
    s.b2 = add_tensor(p + "b2", 1, d);
    layers_.push_back(s);
  }
  lnf_g_ = add_tensor("final_ln.gain", 1, d);
  lnf_b_ = add_tensor("final_ln.bias", 1, d);
  w_out_ = add_tensor("w_out", d, C);
  b_out_ = add_tensor("b_out", 1, C);

  Rng rng(c.seed);
  auto fill = [&](std::size_t offset, std::size_t count, double stddev) {
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<float>(stddev * rng.normal());
  };
  auto ones = [&](std::size_t offset) { std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(offset), d, 1.0); };
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_res = s_in / std::sqrt(2.0 * c.layers);
  const auto dd = static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
  const auto df = static_cast<std::size_t>(d) * static_cast<std::size_t>(ffn_width());
  fill(embedding_, static_cast<std::size_t>(C) * static_cast<std::size_t>(d), 0.5);
  for (const auto& s : layers_) {
    ones(s.ln1_g);
    ones(s.ln2_g);
    fill(s.wq, dd, s_in);
    fill(s.wk, dd, s_in);
    fill(s.wv, dd, s_in);
    fill(s.wo, dd, s_res);
    fill(s.w1, df, s_in);
    fill(s.w2, df, s_res / 2.0);
  }
  ones(lnf_g_);
  fill(w_out_, static_cast<std::size_t>(d) * static_cast<std::size_t>(C), 0.5 * s_in);
}

PredictorCheckpoint AttentionModel::to_checkpoint() const {
  PredictorCheckpoint cp;
  cp.kind = "attention";
  cp.seed = config_.seed;
  cp.hyperparameters = {{"d_model", std::to_string(config_.d_model)},
                        {"layers", std::to_string(config_.layers)},
                        {"heads", std::to_string(config_.heads)},
                        {"window", std::to_string(config_.window)},
                        {"memory", std::to_string(config_.memory)}};
  for (const auto& t : tensors_) {
    ParamArray a{t.name, {t.rows, t.cols}, {}};
    const auto count = static_cast<std::size_t>(t.rows) * static_cast<std::size_t>(t.cols);
    a.values.reserve(count);
    for (std::size_t i = 0; i < count; ++i) a.values.push_back(static_cast<float>(params_[t.offset + i]));
    cp.arrays.push_back(std::move(a));
  }
  return cp;
}

AttentionModel AttentionModel::from_checkpoint(const PredictorCheckpoint& checkpoint) {
  if (checkpoint.kind != "attention") throw Error(ErrorCode::ParseError, "not an attention checkpoint");
  AttentionConfig c;
  c.d_model = static_cast<int>(parse_int(checkpoint.hyperparameter("d_model")));
  c.layers = static_cast<int>(parse_int(checkpoint.hyperparameter("layers")));
  c.heads = static_cast<int>(parse_int(checkpoint.hyperparameter("heads")));
  c.window = static_cast<int>(parse_int(checkpoint.hyperparameter("window")));
  c.memory = static_cast<int>(parse_int(checkpoint.hyperparameter("memory")));
  c.seed = checkpoint.seed;
  AttentionModel model(c);
  for (const auto& t : model.tensors_) {
    const ParamArray& a = checkpoint.array(t.name);
    if (a.shape != std::vector<int>{t.rows, t.cols}) {
      throw Error(ErrorCode::ParseError, "array '" + t.name + "' has the wrong shape");
    }
    std::copy(a.values.begin(), a.values.end(), model.params_.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  return model;
}

AttentionModel::Memory AttentionModel::empty_memory() const {
  return Memory(static_cast<std::size_t>(config_.layers), Mat(0, config_.d_model));
}

// ---------------------------------------------------------------------------
// Training pass
// ---------------------------------------------------------------------------

double AttentionModel::window_pass(std::span<const TokenId> tokens, std::span<const TokenId> targets,
                                   const Memory& memory, std::span<const double> weights, double norm,
                                   std::vector<double>* grad, Memory* next_memory, Matrix* log_probs) const {
  const int d = config_.d_model;
  const int H = config_.heads;
  const int dh = d / H;
  const int F = ffn_width();
  const int C = Vocabulary::size();
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n < 1 || n > config_.window) throw Error(ErrorCode::InvalidArgument, "window length out of range");
  if (targets.size() != tokens.size()) throw Error(ErrorCode::LengthMismatch, "tokens and targets differ in length");
  if (weights.size() != static_cast<std::size_t>(C)) throw Error(ErrorCode::LengthMismatch, "weights length");
  if (memory.size() != static_cast<std::size_t>(config_.layers)) {
    throw Error(ErrorCode::InvalidArgument, "memory must have one entry per layer");
  }
  const Eigen::Index m = memory[0].rows();
  for (const auto& mem : memory) {
    if (mem.rows() != m || mem.cols() != d || m > config_.memory) {
      throw Error(ErrorCode::InvalidArgument, "memory has the wrong shape");
    }
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= C) throw Error(ErrorCode::OutOfVocabulary, std::to_string(t));
  }

  const double* P = params_.data();
  auto mat = [&](std::size_t off, int r, int c) { return MapConstMat(P + off, r, c); };
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int span = rel_span();

  Mat x(n, d);
  const auto E = mat(embedding_, C, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = E.row(tokens[static_cast<std::size_t>(i)]);

  std::vector<Mat> inputs(layers_.size());
  std::vector<LayerCache> caches(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerSlots& s = layers_[l];
    LayerCache& c = caches[l];
    inputs[l] = x;
    Mat cat(m + n, d);
    if (m > 0) cat.topRows(m) = memory[l];
    cat.bottomRows(n) = x;
    c.a = layer_norm(cat, P + s.ln1_g, P + s.ln1_b, c.ln1);
    c.q = c.a.bottomRows(n) * mat(s.wq, d, d);
    c.k = c.a * mat(s.wk, d, d);
    c.v = c.a * mat(s.wv, d, d);
    c.o.resize(n, d);
    c.p.assign(static_cast<std::size_t>(H), Mat());
    for (int j = 0; j < H; ++j) {
      Mat sc = c.q.middleCols(j * dh, dh) * c.k.middleCols(j * dh, dh).transpose() * scale;
      Mat& pj = c.p[static_cast<std::size_t>(j)];
      pj.setZero(n, m + n);
      const double* rel = P + s.rel + static_cast<std::size_t>(j) * static_cast<std::size_t>(span);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index last = m + i;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t <= last; ++t) {
          sc(i, t) += rel[last - t];
          mx = std::max(mx, sc(i, t));
        }
        double sum = 0.0;
        for (Eigen::Index t = 0; t <= last; ++t) {
          pj(i, t) = std::exp(sc(i, t) - mx);
          sum += pj(i, t);
        }
        pj.row(i).head(last + 1) /= sum;
      }
      c.o.middleCols(j * dh, dh) = pj * c.v.middleCols(j * dh, dh);
    }
    c.h2 = x + c.o * mat(s.wo, d, d);
    c.h2.rowwise() += MapConstRow(P + s.bo, d);
    c.f = layer_norm(c.h2, P + s.ln2_g, P + s.ln2_b, c.ln2);
    c.u = c.f * mat(s.w1, d, F);
    c.u.rowwise() += MapConstRow(P + s.b1, F);
    c.g = c.u.unaryExpr(&gelu);
    x = c.h2 + c.g * mat(s.w2, F, d);
    x.rowwise() += MapConstRow(P + s.b2, d);
  }
  LnCache lnf;
  const Mat z = layer_norm(x, P + lnf_g_, P + lnf_b_, lnf);
  Mat logp = z * mat(w_out_, d, C);
  logp.rowwise() += MapConstRow(P + b_out_, C);
  log_softmax_rows(logp);

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    if (t >= C) throw Error(ErrorCode::OutOfVocabulary, std::to_string(t));
    loss -= weights[static_cast<std::size_t>(t)] * logp(i, t);
  }
  loss /= norm;

  if (next_memory) {
    Memory next(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Eigen::Index keep = std::min<Eigen::Index>(config_.memory, m + n);
      Mat cat(m + n, d);
      if (m > 0) cat.topRows(m) = memory[l];
      cat.bottomRows(n) = inputs[l];
      next[l] = cat.bottomRows(keep);
    }
    *next_memory = std::move(next);
  }
  if (log_probs) *log_probs = logp;
  if (!grad) return loss;

  if (grad->size() != params_.size()) grad->assign(params_.size(), 0.0);
  double* G = grad->data();
  auto gmat = [&](std::size_t off, int r, int c) { return MapMat(G + off, r, c); };

  Mat dlogits = Mat::Zero(n, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    const double coef = weights[static_cast<std::size_t>(t)] / norm;
    dlogits.row(i) = logp.row(i).array().exp() * coef;
    dlogits(i, t) -= coef;
  }
  gmat(w_out_, d, C).noalias() += z.transpose() * dlogits;
  MapRow(G + b_out_, C) += dlogits.colwise().sum();
  Mat dz = dlogits * mat(w_out_, d, C).transpose();
  Mat dx = layer_norm_backward(dz, lnf, P + lnf_g_, G + lnf_g_, G + lnf_b_);

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerSlots& s = layers_[l];
    const LayerCache& c = caches[l];

    // Feed-forward block.
    gmat(s.w2, F, d).noalias() += c.g.transpose() * dx;
    MapRow(G + s.b2, d) += dx.colwise().sum();
    Mat du = (dx * mat(s.w2, F, d).transpose()).cwiseProduct(c.u.unaryExpr(&gelu_grad));
    gmat(s.w1, d, F).noalias() += c.f.transpose() * du;
    MapRow(G + s.b1, F) += du.colwise().sum();
    const Mat df = du * mat(s.w1, d, F).transpose();
    const Mat dh2 = dx + layer_norm_backward(df, c.ln2, P + s.ln2_g, G + s.ln2_g, G + s.ln2_b);

    // Attention block.
    gmat(s.wo, d, d).noalias() += c.o.transpose() * dh2;
    MapRow(G + s.bo, d) += dh2.colwise().sum();
    const Mat dO = dh2 * mat(s.wo, d, d).transpose();
    Mat dQ = Mat::Zero(n, d);
    Mat dK = Mat::Zero(m + n, d);
    Mat dV = Mat::Zero(m + n, d);
    for (int j = 0; j < H; ++j) {
      const Mat& pj = c.p[static_cast<std::size_t>(j)];
      const auto dOj = dO.middleCols(j * dh, dh);
      const Mat dP = dOj * c.v.middleCols(j * dh, dh).transpose();
      dV.middleCols(j * dh, dh).noalias() += pj.transpose() * dOj;
      Mat dS = pj.cwiseProduct(dP);
      const Eigen::VectorXd rows = dS.rowwise().sum();
      dS -= pj.cwiseProduct(rows.replicate(1, m + n));
      double* grel = G + s.rel + static_cast<std::size_t>(j) * static_cast<std::size_t>(span);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index t = 0; t <= m + i; ++t) grel[m + i - t] += dS(i, t);
      }
      dQ.middleCols(j * dh, dh).noalias() += dS * c.k.middleCols(j * dh, dh) * scale;
      dK.middleCols(j * dh, dh).noalias() += dS.transpose() * c.q.middleCols(j * dh, dh) * scale;
    }
    gmat(s.wq, d, d).noalias() += c.a.bottomRows(n).transpose() * dQ;
    gmat(s.wk, d, d).noalias() += c.a.transpose() * dK;
    gmat(s.wv, d, d).noalias() += c.a.transpose() * dV;
    Mat da = dK * mat(s.wk, d, d).transpose() + dV * mat(s.wv, d, d).transpose();
    da.bottomRows(n) += dQ * mat(s.wq, d, d).transpose();
    // Memory rows are constants; only the current window's share flows back.
    const Mat dcat = layer_norm_backward(da, c.ln1, P + s.ln1_g, G + s.ln1_g, G + s.ln1_b);
    dx = dh2 + dcat.bottomRows(n);
  }
  auto gE = gmat(embedding_, C, d);
  for (Eigen::Index i = 0; i < n; ++i) gE.row(tokens[static_cast<std::size_t>(i)]) += dx.row(i);
  return loss;
}

// ---------------------------------------------------------------------------
// Incremental inference
// ---------------------------------------------------------------------------

class AttentionSession final : public PredictorSession {
 public:
  explicit AttentionSession(const AttentionModel& model) : model_(model) {
    const int d = model.config_.d_model;
    const auto L = model.layers_.size();
    mem_.assign(L, Mat(0, d));
    mem_k_.assign(L, Mat(0, d));
    mem_v_.assign(L, Mat(0, d));
    win_in_.assign(L, Mat(0, d));
    win_k_.assign(L, Mat(0, d));
    win_v_.assign(L, Mat(0, d));
  }

  void push(TokenId token) override {
    const auto& M = model_;
    const int d = M.config_.d_model;
    const int H = M.config_.heads;
    const int dh = d / H;
    const int F = M.ffn_width();
    const int C = Vocabulary::size();
    if (token < 0 || token >= C) throw Error(ErrorCode::OutOfVocabulary, std::to_string(token));
    const double* P = M.params_.data();
    auto mat = [&](std::size_t off, int r, int c) { return MapConstMat(P + off, r, c); };
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int span = M.rel_span();

    RowVec x = mat(M.embedding_, C, d).row(token);
    const Eigen::Index i = win_in_[0].rows();
    for (std::size_t l = 0; l < M.layers_.size(); ++l) {
      const auto& s = M.layers_[l];
      append_row(win_in_[l], x);
      const RowVec a = layer_norm_row(x, P + s.ln1_g, P + s.ln1_b);
      const RowVec q = a * mat(s.wq, d, d);
      append_row(win_k_[l], a * mat(s.wk, d, d));
      append_row(win_v_[l], a * mat(s.wv, d, d));
      const Eigen::Index m = mem_[l].rows();
      RowVec o(d);
      for (int j = 0; j < H; ++j) {
        const double* rel = P + s.rel + static_cast<std::size_t>(j) * static_cast<std::size_t>(span);
        const auto qj = q.segment(j * dh, dh);
        Eigen::VectorXd sc(m + i + 1);
        for (Eigen::Index t = 0; t < m; ++t) sc(t) = qj.dot(mem_k_[l].row(t).segment(j * dh, dh)) * scale;
        for (Eigen::Index t = 0; t <= i; ++t) sc(m + t) = qj.dot(win_k_[l].row(t).segment(j * dh, dh)) * scale;
        for (Eigen::Index t = 0; t <= m + i; ++t) sc(t) += rel[m + i - t];
        const double mx = sc.maxCoeff();
        Eigen::VectorXd p = (sc.array() - mx).exp();
        p /= p.sum();
        RowVec oj = RowVec::Zero(dh);
        for (Eigen::Index t = 0; t < m; ++t) oj += p(t) * mem_v_[l].row(t).segment(j * dh, dh);
        for (Eigen::Index t = 0; t <= i; ++t) oj += p(m + t) * win_v_[l].row(t).segment(j * dh, dh);
        o.segment(j * dh, dh) = oj;
      }
      const RowVec h2 = x + o * mat(s.wo, d, d) + MapConstRow(P + s.bo, d);
      const RowVec f = layer_norm_row(h2, P + s.ln2_g, P + s.ln2_b);
      RowVec u = f * mat(s.w1, d, F) + MapConstRow(P + s.b1, F);
      u = u.unaryExpr(&gelu);
      x = h2 + u * mat(s.w2, F, d) + MapConstRow(P + s.b2, d);
    }
    const RowVec z = layer_norm_row(x, P + M.lnf_g_, P + M.lnf_b_);
    logits_ = z * mat(M.w_out_, d, C) + MapConstRow(P + M.b_out_, C);
    has_logits_ = true;

    if (win_in_[0].rows() == M.config_.window) roll();
  }

  std::vector<double> distribution() override {
    const auto C = static_cast<std::size_t>(Vocabulary::size());
    if (!has_logits_) return std::vector<double>(C, 1.0 / static_cast<double>(C));
    const double mx = logits_.maxCoeff();
    Eigen::RowVectorXd p = (logits_.array() - mx).exp();
    p /= p.sum();
    return std::vector<double>(p.data(), p.data() + p.size());
  }

 private:
  static void append_row(Mat& m, const RowVec& row) {
    m.conservativeResize(m.rows() + 1, Eigen::NoChange);
    m.row(m.rows() - 1) = row;
  }

  void roll() {
    const auto& M = model_;
    const int d = M.config_.d_model;
    const double* P = M.params_.data();
    for (std::size_t l = 0; l < M.layers_.size(); ++l) {
      const auto& s = M.layers_[l];
      const Eigen::Index total = mem_[l].rows() + win_in_[l].rows();
      const Eigen::Index keep = std::min<Eigen::Index>(M.config_.memory, total);
      Mat cat(total, d);
      cat.topRows(mem_[l].rows()) = mem_[l];
      cat.bottomRows(win_in_[l].rows()) = win_in_[l];
      mem_[l] = cat.bottomRows(keep);
      LnCache unused;
      const Mat a = layer_norm(mem_[l], P + s.ln1_g, P + s.ln1_b, unused);
      mem_k_[l] = a * MapConstMat(P + s.wk, d, d);
      mem_v_[l] = a * MapConstMat(P + s.wv, d, d);
      win_in_[l].resize(0, d);
      win_k_[l].resize(0, d);
      win_v_[l].resize(0, d);
    }
  }

  const AttentionModel& model_;
  std::vector<Mat> mem_, mem_k_, mem_v_, win_in_, win_k_, win_v_;
  RowVec logits_;
  bool has_logits_ = false;
};

std::unique_ptr<PredictorSession> AttentionModel::start_session() const {
  return std::make_unique<AttentionSession>(*this);
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

std::vector<double> train(AttentionModel& model, const std::vector<TokenSequence>& segments,
                          std::span<const double> weights, int epochs, double stop_loss, double learning_rate,
                          double clip_norm) {
  if (segments.empty()) throw Error(ErrorCode::InvalidArgument, "no training segments");
  const std::size_t N = segments.front().size();
  for (const auto& s : segments) {
    if (s.size() != N || N == 0) throw Error(ErrorCode::InvalidArgument, "segments must share one non-zero length");
  }
  const auto W = static_cast<std::size_t>(model.config().window);
  std::vector<double> curve;
  std::vector<double> grad(model.parameters().size(), 0.0);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    AttentionModel::Memory memory = model.empty_memory();
    double epoch_sum = 0.0;
    for (std::size_t si = 0; si < segments.size(); ++si) {
      const auto& tokens = segments[si].tokens;
      std::vector<TokenId> targets(tokens.begin() + 1, tokens.end());
      targets.push_back(si + 1 < segments.size() ? segments[si + 1].tokens.front() : -1);
      const double norm = static_cast<double>(targets.back() < 0 ? N - 1 : N);
      if (norm == 0.0) continue;

      std::fill(grad.begin(), grad.end(), 0.0);
      double seg_loss = 0.0;
      for (std::size_t start = 0; start < N; start += W) {
        const std::size_t len = std::min(W, N - start);
        seg_loss += model.window_pass(std::span(tokens).subspan(start, len), std::span(targets).subspan(start, len),
                                      memory, weights, norm, &grad, &memory);
      }
      if (!std::isfinite(seg_loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "loss diverged in epoch " + std::to_string(epoch));
      }
      double sq = 0.0;
      for (double g : grad) sq += g * g;
      const double gnorm = std::sqrt(sq);
      const double step = gnorm > clip_norm ? learning_rate * clip_norm / gnorm : learning_rate;
      auto& params = model.parameters();
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= step * grad[k];
      epoch_sum += seg_loss;
    }
    const double epoch_loss = epoch_sum / static_cast<double>(segments.size());
    if (!std::isfinite(epoch_loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss diverged in epoch " + std::to_string(epoch));
    }
    curve.push_back(epoch_loss);
    if (epoch_loss < stop_loss) break;
  }
  return curve;
}

}  // namespace

PredictorCheckpoint finetune(const Predictor& model, const std::vector<TokenSequence>& segments,
                             const FavoriteWeights& weights, const FinetuneOptions& options, uint64_t seed) {
  if (!model.trainable()) throw Error(ErrorCode::InvalidArgument, "model kind '" + model.kind() + "' is not trainable");
  if (options.epochs < 0 || !(options.learning_rate > 0.0) || !(options.clip_norm > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "bad fine-tuning options");
  }
  AttentionModel work = AttentionModel::from_checkpoint(model.to_checkpoint());
  const auto curve =
      train(work, segments, weights.w, options.epochs, options.stop_loss, options.learning_rate, options.clip_norm);
  PredictorCheckpoint cp = work.to_checkpoint();
  cp.seed = seed;
  cp.hyperparameters.emplace_back("learning_rate", format_double(options.learning_rate));
  cp.hyperparameters.emplace_back("clip_norm", format_double(options.clip_norm));
  cp.hyperparameters.emplace_back("stop_loss", format_double(options.stop_loss));
  cp.hyperparameters.emplace_back("epochs", std::to_string(options.epochs));
  cp.loss_curve = curve;
  cp.weights = weights.w;
  cp.alpha = weights.alpha;
  cp.selected = weights.selected;
  return cp;
}

PredictorCheckpoint pretrain(const AttentionConfig& config, const PretrainOptions& options) {
  AttentionModel model(config);
  std::vector<TokenSequence> segments;
  for (const Score& tune : public_domain_tunes()) {
    for (auto& seg : segment(encode(tune, 0), options.segment_length)) segments.push_back(std::move(seg));
  }
  FinetuneOptions fo;
  fo.epochs = options.epochs;
  fo.stop_loss = 0.0;
  fo.learning_rate = options.learning_rate;
  fo.clip_norm = options.clip_norm;
  return finetune(model, segments, unit_weights(), fo, config.seed);
}

}  // namespace upmt
