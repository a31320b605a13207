#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kbqa/actions.hpp"
#include "kbqa/reward.hpp"

namespace kbqa {

struct InfeasibleToken : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PolicyConfig {
  int d_e = 32;      // token embedding size
  int d_q = 32;      // decoder hidden size; per-direction encoder size is d_q/2
  int max_len = 21;  // decoded tokens, EOQ included
  double init_range = 0.08;
};

struct LstmParams {
  Eigen::MatrixXd W;  // 4h x input
  Eigen::MatrixXd U;  // 4h x h
  Eigen::VectorXd b;  // 4h
};

// Trainable tensors plus the frozen input embeddings. Output vectors v_i live
// in V_out (one row per operator); embed_out also holds the GO row.
struct PolicyParams {
  Eigen::MatrixXd embed_in;   // |V_in| x d_e, frozen after init
  Eigen::MatrixXd embed_out;  // (num ops + GO) x d_e
  LstmParams enc_f, enc_b, dec;
  Eigen::MatrixXd W_a;    // attention bilinear form, d_q x d_q
  Eigen::MatrixXd W_b;    // bridge, d_q x d_q
  Eigen::VectorXd b_b;    // bridge bias, d_q
  Eigen::MatrixXd W_o;    // generate projection, d_q x d_q
  Eigen::MatrixXd W_c;    // copy projection, d_q x d_q
  Eigen::MatrixXd V_out;  // num ops x d_q
};

struct LstmGrads {
  Eigen::MatrixXd W, U;
  Eigen::VectorXd b;
};

struct PolicyGrads {
  Eigen::MatrixXd embed_out;
  LstmGrads enc_f, enc_b, dec;
  Eigen::MatrixXd W_a, W_b;
  Eigen::VectorXd b_b;
  Eigen::MatrixXd W_o, W_c, V_out;
};

// Applies fn to every trainable tensor in a fixed order. The input
// embeddings are deliberately absent: they stay at their initial values.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(p.embed_out);
  fn(p.enc_f.W);
  fn(p.enc_f.U);
  fn(p.enc_f.b);
  fn(p.enc_b.W);
  fn(p.enc_b.U);
  fn(p.enc_b.b);
  fn(p.dec.W);
  fn(p.dec.U);
  fn(p.dec.b);
  fn(p.W_a);
  fn(p.W_b);
  fn(p.b_b);
  fn(p.W_o);
  fn(p.W_c);
  fn(p.V_out);
}

template <typename Params, typename Grads, typename Fn>
void for_each_trainable(Params& p, Grads& g, Fn&& fn) {
  fn(p.embed_out, g.embed_out);
  fn(p.enc_f.W, g.enc_f.W);
  fn(p.enc_f.U, g.enc_f.U);
  fn(p.enc_f.b, g.enc_f.b);
  fn(p.enc_b.W, g.enc_b.W);
  fn(p.enc_b.U, g.enc_b.U);
  fn(p.enc_b.b, g.enc_b.b);
  fn(p.dec.W, g.dec.W);
  fn(p.dec.U, g.dec.U);
  fn(p.dec.b, g.dec.b);
  fn(p.W_a, g.W_a);
  fn(p.W_b, g.W_b);
  fn(p.b_b, g.b_b);
  fn(p.W_o, g.W_o);
  fn(p.W_c, g.W_c);
  fn(p.V_out, g.V_out);
}

inline const std::vector<std::string>& trainable_tensor_names() {
  static const std::vector<std::string> names = {
      "embed_out", "enc_f.W", "enc_f.U", "enc_f.b", "enc_b.W", "enc_b.U",
      "enc_b.b",   "dec.W",   "dec.U",   "dec.b",   "W_a",     "W_b",
      "b_b",       "W_o",     "W_c",     "V_out"};
  return names;
}

struct EncodedQuestion {
  std::vector<std::string> tokens;
  Eigen::MatrixXd memory;  // T x d_q, row j = e_j
  Eigen::VectorXd q0;      // bridged initial decoder state
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmStep {
  Eigen::VectorXd x, h_prev, c_prev;
  Eigen::VectorXd i, f, g, o, c, h;
};

inline LstmStep lstm_forward(const LstmParams& p, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev) {
  const int h = static_cast<int>(h_prev.size());
  const Eigen::VectorXd z = p.W * x + p.U * h_prev + p.b;
  LstmStep s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.i = z.segment(0, h).unaryExpr([](double v) { return sigmoid(v); });
  s.f = z.segment(h, h).unaryExpr([](double v) { return sigmoid(v); });
  s.g = z.segment(2 * h, h).array().tanh();
  s.o = z.segment(3 * h, h).unaryExpr([](double v) { return sigmoid(v); });
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  s.h = s.o.cwiseProduct(s.c.array().tanh().matrix());
  return s;
}

inline void lstm_backward(const LstmParams& p, const LstmStep& s, const Eigen::VectorXd& dh,
                          const Eigen::VectorXd& dc_in, LstmGrads& g, Eigen::VectorXd& dx,
                          Eigen::VectorXd& dh_prev, Eigen::VectorXd& dc_prev) {
  const int h = static_cast<int>(s.h_prev.size());
  const Eigen::VectorXd tanh_c = s.c.array().tanh();
  const Eigen::VectorXd dc =
      dc_in + dh.cwiseProduct(s.o).cwiseProduct((1.0 - tanh_c.array().square()).matrix());
  const Eigen::VectorXd do_ = dh.cwiseProduct(tanh_c);
  const Eigen::VectorXd di = dc.cwiseProduct(s.g);
  const Eigen::VectorXd df = dc.cwiseProduct(s.c_prev);
  const Eigen::VectorXd dg = dc.cwiseProduct(s.i);

  Eigen::VectorXd dz(4 * h);
  dz.segment(0, h) = di.cwiseProduct(s.i).cwiseProduct((1.0 - s.i.array()).matrix());
  dz.segment(h, h) = df.cwiseProduct(s.f).cwiseProduct((1.0 - s.f.array()).matrix());
  dz.segment(2 * h, h) = dg.cwiseProduct((1.0 - s.g.array().square()).matrix());
  dz.segment(3 * h, h) = do_.cwiseProduct(s.o).cwiseProduct((1.0 - s.o.array()).matrix());

  g.W += dz * s.x.transpose();
  g.U += dz * s.h_prev.transpose();
  g.b += dz;
  dx = p.W.transpose() * dz;
  dh_prev = p.U.transpose() * dz;
  dc_prev = dc.cwiseProduct(s.f);
}

}  // namespace detail

// Attention seq2seq policy with a generate/copy output layer. Output tokens
// are either operator names (generated against V_out) or question tokens
// (copied by position). Gradients are derived by hand; the finite-difference
// suite in the tests is the oracle for every formula here.
class Policy {
 public:
  explicit Policy(std::vector<std::string> input_vocab, PolicyConfig cfg = {},
                  std::uint64_t seed = 1)
      : cfg_(cfg), ops_(operator_names().begin(), operator_names().end()) {
    if (cfg_.d_q % 2 != 0) throw std::invalid_argument("d_q must be even");
    vocab_.push_back("<unk>");
    vocab_index_["<unk>"] = 0;
    for (auto& tok : input_vocab) {
      if (vocab_index_.emplace(tok, static_cast<int>(vocab_.size())).second)
        vocab_.push_back(std::move(tok));
    }
    for (std::size_t i = 0; i < ops_.size(); ++i) op_index_[ops_[i]] = static_cast<int>(i);
    init_params(seed);
  }

  const PolicyConfig& config() const { return cfg_; }
  const PolicyParams& params() const { return params_; }
  PolicyParams& mutable_params() { return params_; }
  const std::vector<std::string>& input_vocab() const { return vocab_; }
  int go_row() const { return static_cast<int>(ops_.size()); }

  PolicyGrads zero_grads() const {
    PolicyGrads g;
    for_each_trainable(params_, g, [](const auto& t, auto& grad) {
      grad = std::remove_reference_t<decltype(grad)>::Zero(t.rows(), t.cols());
    });
    return g;
  }

  void apply_ascent(const PolicyGrads& grads, double lr) {
    for_each_trainable(params_, grads, [&](auto& t, const auto& g) { t += lr * g; });
  }

  EncodedQuestion encode(const std::vector<std::string>& tokens) const {
    EncoderTape tape;
    run_encoder(tokens, tape);
    EncodedQuestion enc;
    enc.tokens = tokens;
    enc.memory = tape.memory;
    enc.q0 = tape.q0;
    return enc;
  }

  Trial greedy_decode(const EncodedQuestion& enc) const {
    Trial trial;
    DecodeState st = initial_state(enc);
    for (int t = 0; t < cfg_.max_len; ++t) {
      const StepDist dist = step_distribution(enc, st);
      std::size_t best = 0;
      for (std::size_t k = 1; k < dist.candidates.size(); ++k)
        if (dist.probs[k] > dist.probs[best]) best = k;
      const std::string tok = dist.candidates[best];
      trial.log_prob += std::log(dist.probs[best]);
      trial.tokens.push_back(tok);
      if (tok == "EOQ") break;
      advance(st, tok, dist);
    }
    return trial;
  }

  // Beam search keeping `beam_width` partial programs; returns up to K
  // trials ranked by log probability. Unfinished beams fill in only when the
  // search cannot produce K EOQ-terminated programs within max_len.
  std::vector<Trial> beam_sample(const EncodedQuestion& enc, int k, int beam_width = 0) const {
    if (k <= 0) return {};
    if (beam_width <= 0) beam_width = k;
    struct Hyp {
      DecodeState st;
      Trial trial;
    };
    std::vector<Hyp> beam;
    beam.push_back(Hyp{initial_state(enc), Trial{}});
    std::vector<Trial> finished;

    for (int t = 0; t < cfg_.max_len && !beam.empty(); ++t) {
      // Expansions compete for the beam slots together, EOQ ones included;
      // a winning EOQ retires its program. Width one therefore follows the
      // greedy argmax path exactly.
      std::vector<Hyp> expanded;
      for (Hyp& h : beam) {
        const StepDist dist = step_distribution(enc, h.st);
        for (std::size_t c = 0; c < dist.candidates.size(); ++c) {
          Hyp next = h;
          next.trial.tokens.push_back(dist.candidates[c]);
          next.trial.log_prob += std::log(dist.probs[c]);
          if (dist.candidates[c] != "EOQ") advance(next.st, dist.candidates[c], dist);
          expanded.push_back(std::move(next));
        }
      }
      std::sort(expanded.begin(), expanded.end(), [](const Hyp& a, const Hyp& b) {
        if (a.trial.log_prob != b.trial.log_prob) return a.trial.log_prob > b.trial.log_prob;
        return a.trial.tokens < b.trial.tokens;
      });
      if (static_cast<int>(expanded.size()) > beam_width) expanded.resize(beam_width);
      beam.clear();
      for (Hyp& h : expanded) {
        if (h.trial.tokens.back() == "EOQ")
          finished.push_back(std::move(h.trial));
        else
          beam.push_back(std::move(h));
      }
    }
    for (Hyp& h : beam) finished.push_back(std::move(h.trial));  // truncated leftovers
    std::sort(finished.begin(), finished.end(), [](const Trial& a, const Trial& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.tokens < b.tokens;
    });
    if (static_cast<int>(finished.size()) > k) finished.resize(k);
    return finished;
  }

  // Ancestral sampling from the step distributions. The inverse-CDF draw
  // uses raw generator words so results depend only on the generator state,
  // not on library distribution internals.
  Trial sample(const EncodedQuestion& enc, std::mt19937_64& rng) const {
    Trial trial;
    DecodeState st = initial_state(enc);
    for (int t = 0; t < cfg_.max_len; ++t) {
      const StepDist dist = step_distribution(enc, st);
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      std::size_t pick = dist.candidates.size() - 1;
      double cum = 0.0;
      for (std::size_t c = 0; c < dist.candidates.size(); ++c) {
        cum += dist.probs[c];
        if (u < cum) {
          pick = c;
          break;
        }
      }
      const std::string tok = dist.candidates[pick];
      trial.log_prob += std::log(dist.probs[pick]);
      trial.tokens.push_back(tok);
      if (tok == "EOQ") break;
      advance(st, tok, dist);
    }
    return trial;
  }

  // Log probability of producing exactly these tokens. Throws
  // InfeasibleToken for a token that is neither an operator nor present in
  // the question.
  double log_prob(const EncodedQuestion& enc, const std::vector<std::string>& tokens) const {
    double total = 0.0;
    DecodeState st = initial_state(enc);
    for (const std::string& tok : tokens) {
      const StepDist dist = step_distribution(enc, st);
      total += std::log(token_prob(dist, tok));
      advance(st, tok, dist);
    }
    return total;
  }

  // One decoder step after teacher-forcing a prefix, with the selective-read
  // internals exposed. Test-facing; decoding goes through greedy/beam.
  struct StepProbe {
    std::vector<std::string> candidates;
    std::vector<double> probs;
    Eigen::VectorXd selective_read;
    std::vector<int> match;
    Eigen::VectorXd rho;
  };

  StepProbe probe(const EncodedQuestion& enc, const std::vector<std::string>& prefix) const {
    DecodeState st = initial_state(enc);
    for (const std::string& tok : prefix) {
      const StepDist dist = step_distribution(enc, st);
      if (token_prob(dist, tok) <= 0.0) throw InfeasibleToken(tok);
      advance(st, tok, dist);
    }
    const StepDist dist = step_distribution(enc, st);
    return StepProbe{dist.candidates, dist.probs, st.r, st.match, st.rho};
  }

  // Accumulates d(weight * log P(output | input)) / d(params) into grads.
  void accumulate_gradients(const std::vector<std::string>& input_tokens,
                            const std::vector<std::string>& output_tokens, double weight,
                            PolicyGrads& grads) const {
    if (weight == 0.0 || output_tokens.empty()) return;
    EncoderTape etape;
    run_encoder(input_tokens, etape);
    EncodedQuestion enc;
    enc.tokens = input_tokens;
    enc.memory = etape.memory;
    enc.q0 = etape.q0;
    const std::vector<DecTape> steps = run_decoder_teacher(enc, output_tokens);
    backward(etape, steps, weight, grads);
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["version"] = 1;
    j["d_e"] = cfg_.d_e;
    j["d_q"] = cfg_.d_q;
    j["max_len"] = cfg_.max_len;
    j["init_range"] = cfg_.init_range;
    j["input_vocab"] = vocab_;
    j["operators"] = ops_;
    j["embed_in"] = matrix_to_json(params_.embed_in);
    nlohmann::json tensors;
    std::size_t idx = 0;
    for_each_tensor(params_, [&](const auto& t) {
      tensors[trainable_tensor_names()[idx++]] = matrix_to_json(t);
    });
    j["tensors"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump() << '\n';
  }

  static Policy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != 1) throw std::runtime_error("unknown checkpoint version");
    PolicyConfig cfg;
    cfg.d_e = j.at("d_e").get<int>();
    cfg.d_q = j.at("d_q").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.init_range = j.at("init_range").get<double>();
    auto vocab = j.at("input_vocab").get<std::vector<std::string>>();
    vocab.erase(vocab.begin());  // the constructor re-adds <unk> in front
    Policy p(std::move(vocab), cfg, 1);
    p.params_.embed_in = matrix_from_json(j.at("embed_in"));
    std::size_t idx = 0;
    for_each_tensor(p.params_, [&](auto& t) {
      t = matrix_from_json(j.at("tensors").at(trainable_tensor_names()[idx++]));
    });
    return p;
  }

 private:
  struct EncoderTape {
    std::vector<int> ids;
    std::vector<detail::LstmStep> fwd, bwd;
    Eigen::MatrixXd memory;     // T x d_q
    Eigen::VectorXd bridge_in;  // [hF_T; hB_1]
    Eigen::VectorXd q0;
  };

  // Everything one decoder step computed from the pre-step state.
  struct StepDist {
    Eigen::VectorXd alpha, c_ctx;  // attention weights and context
    detail::LstmStep lstm;
    Eigen::VectorXd q;                    // new hidden state
    Eigen::VectorXd w_oq, psi_g;          // generate projection and scores
    Eigen::MatrixXd phi_c;                // tanh(memory W_c), T x d_q
    Eigen::VectorXd psi_c;                // copy scores phi_c q
    Eigen::VectorXd pg, pc;               // slot posteriors under the shared softmax
    std::vector<std::string> candidates;  // operators, then unique question tokens
    std::vector<double> probs;            // pooled token probabilities
  };

  struct DecodeState {
    Eigen::VectorXd q, m;
    Eigen::VectorXd prev_pc;  // copy posteriors of the previous step
    std::string prev_token;   // empty means GO
    // Selective read against prev_token; filled by step_distribution so the
    // teacher-forced tape can keep them for the backward pass.
    Eigen::VectorXd r;
    std::vector<int> match;
    Eigen::VectorXd rho;
  };

  struct DecTape {
    DecodeState before;
    StepDist dist;
    double p_tok = 0.0;
    std::vector<int> gen_hits, copy_hits;
  };

  PolicyConfig cfg_;
  std::vector<std::string> ops_;
  std::vector<std::string> vocab_;
  std::map<std::string, int> vocab_index_;
  std::map<std::string, int> op_index_;
  PolicyParams params_;

  int input_row(const std::string& tok) const {
    const auto it = vocab_index_.find(tok);
    return it == vocab_index_.end() ? 0 : it->second;  // unseen words share <unk>
  }

  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-cfg_.init_range, cfg_.init_range);
    auto fill = [&](Eigen::MatrixXd& m, int rows, int cols) {
      m.resize(rows, cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    };
    auto fillv = [&](Eigen::VectorXd& v, int rows) {
      v.resize(rows);
      for (int r = 0; r < rows; ++r) v(r) = dist(rng);
    };
    const int h = cfg_.d_q / 2;
    const int n_ops = static_cast<int>(ops_.size());
    fill(params_.embed_in, static_cast<int>(vocab_.size()), cfg_.d_e);
    fill(params_.embed_out, n_ops + 1, cfg_.d_e);  // +1 for GO
    fill(params_.enc_f.W, 4 * h, cfg_.d_e);
    fill(params_.enc_f.U, 4 * h, h);
    fillv(params_.enc_f.b, 4 * h);
    fill(params_.enc_b.W, 4 * h, cfg_.d_e);
    fill(params_.enc_b.U, 4 * h, h);
    fillv(params_.enc_b.b, 4 * h);
    const int dec_in = cfg_.d_e + 2 * cfg_.d_q;  // [phi(prev); r; c_t]
    fill(params_.dec.W, 4 * cfg_.d_q, dec_in);
    fill(params_.dec.U, 4 * cfg_.d_q, cfg_.d_q);
    fillv(params_.dec.b, 4 * cfg_.d_q);
    fill(params_.W_a, cfg_.d_q, cfg_.d_q);
    fill(params_.W_b, cfg_.d_q, cfg_.d_q);
    fillv(params_.b_b, cfg_.d_q);
    fill(params_.W_o, cfg_.d_q, cfg_.d_q);
    fill(params_.W_c, cfg_.d_q, cfg_.d_q);
    fill(params_.V_out, n_ops, cfg_.d_q);
  }

  void run_encoder(const std::vector<std::string>& tokens, EncoderTape& tape) const {
    if (tokens.empty()) throw std::invalid_argument("cannot encode an empty question");
    const int T = static_cast<int>(tokens.size());
    const int h = cfg_.d_q / 2;
    tape.ids.resize(T);
    for (int i = 0; i < T; ++i) tape.ids[i] = input_row(tokens[i]);

    tape.fwd.resize(T);
    Eigen::VectorXd hf = Eigen::VectorXd::Zero(h), cf = Eigen::VectorXd::Zero(h);
    for (int i = 0; i < T; ++i) {
      tape.fwd[i] = detail::lstm_forward(params_.enc_f,
                                         params_.embed_in.row(tape.ids[i]).transpose(), hf, cf);
      hf = tape.fwd[i].h;
      cf = tape.fwd[i].c;
    }
    tape.bwd.resize(T);
    Eigen::VectorXd hb = Eigen::VectorXd::Zero(h), cb = Eigen::VectorXd::Zero(h);
    for (int i = T - 1; i >= 0; --i) {
      tape.bwd[i] = detail::lstm_forward(params_.enc_b,
                                         params_.embed_in.row(tape.ids[i]).transpose(), hb, cb);
      hb = tape.bwd[i].h;
      cb = tape.bwd[i].c;
    }
    tape.memory.resize(T, cfg_.d_q);
    for (int i = 0; i < T; ++i) {
      tape.memory.row(i).head(h) = tape.fwd[i].h.transpose();
      tape.memory.row(i).tail(h) = tape.bwd[i].h.transpose();
    }
    tape.bridge_in.resize(cfg_.d_q);
    tape.bridge_in.head(h) = tape.fwd[T - 1].h;
    tape.bridge_in.tail(h) = tape.bwd[0].h;
    tape.q0 = (params_.W_b * tape.bridge_in + params_.b_b).array().tanh();
  }

  DecodeState initial_state(const EncodedQuestion& enc) const {
    DecodeState st;
    st.q = enc.q0;
    st.m = Eigen::VectorXd::Zero(cfg_.d_q);
    st.prev_pc = Eigen::VectorXd::Zero(enc.memory.rows());
    st.r = Eigen::VectorXd::Zero(cfg_.d_q);
    return st;
  }

  Eigen::VectorXd prev_embedding(const std::string& prev_token) const {
    if (prev_token.empty()) return params_.embed_out.row(go_row()).transpose();
    if (const auto op = op_index_.find(prev_token); op != op_index_.end())
      return params_.embed_out.row(op->second).transpose();
    return params_.embed_in.row(input_row(prev_token)).transpose();
  }

  StepDist step_distribution(const EncodedQuestion& enc, DecodeState& st) const {
    const int T = static_cast<int>(enc.memory.rows());
    StepDist d;

    // Selective read over positions whose token equals the previous output.
    st.match.clear();
    st.r = Eigen::VectorXd::Zero(cfg_.d_q);
    if (!st.prev_token.empty())
      for (int j = 0; j < T; ++j)
        if (enc.tokens[j] == st.prev_token) st.match.push_back(j);
    st.rho.resize(static_cast<Eigen::Index>(st.match.size()));
    if (!st.match.empty()) {
      double norm = 0.0;
      for (int j : st.match) norm += st.prev_pc(j);
      if (norm > 0.0) {
        for (std::size_t k = 0; k < st.match.size(); ++k) {
          st.rho(static_cast<Eigen::Index>(k)) = st.prev_pc(st.match[k]) / norm;
          st.r += st.rho(static_cast<Eigen::Index>(k)) * enc.memory.row(st.match[k]).transpose();
        }
      } else {
        st.rho.setZero();
      }
    }

    // Attention over the question memory with the previous hidden state.
    const Eigen::VectorXd scores = enc.memory * (params_.W_a * st.q);
    d.alpha = (scores.array() - scores.maxCoeff()).exp();
    d.alpha /= d.alpha.sum();
    d.c_ctx = enc.memory.transpose() * d.alpha;

    Eigen::VectorXd y(cfg_.d_e + 2 * cfg_.d_q);
    y.head(cfg_.d_e) = prev_embedding(st.prev_token);
    y.segment(cfg_.d_e, cfg_.d_q) = st.r;
    y.tail(cfg_.d_q) = d.c_ctx;
    d.lstm = detail::lstm_forward(params_.dec, y, st.q, st.m);
    d.q = d.lstm.h;

    d.w_oq = params_.W_o * d.q;
    d.psi_g = params_.V_out * d.w_oq;
    d.phi_c = (enc.memory * params_.W_c).array().tanh();
    d.psi_c = d.phi_c * d.q;

    // One softmax over all generate and copy slots.
    const double shift = std::max(d.psi_g.maxCoeff(), d.psi_c.maxCoeff());
    const Eigen::VectorXd eg = (d.psi_g.array() - shift).exp();
    const Eigen::VectorXd ec = (d.psi_c.array() - shift).exp();
    const double z = eg.sum() + ec.sum();
    d.pg = eg / z;
    d.pc = ec / z;

    // Token probabilities pool every slot that spells the token.
    const int n_ops = static_cast<int>(ops_.size());
    d.candidates.assign(ops_.begin(), ops_.end());
    d.probs.assign(static_cast<std::size_t>(n_ops), 0.0);
    for (int i = 0; i < n_ops; ++i) d.probs[static_cast<std::size_t>(i)] = d.pg(i);
    std::map<std::string, std::size_t> copy_slot;
    for (int j = 0; j < T; ++j) {
      if (const auto op = op_index_.find(enc.tokens[j]); op != op_index_.end()) {
        d.probs[static_cast<std::size_t>(op->second)] += d.pc(j);
        continue;
      }
      auto [it, inserted] = copy_slot.try_emplace(enc.tokens[j], d.candidates.size());
      if (inserted) {
        d.candidates.push_back(enc.tokens[j]);
        d.probs.push_back(0.0);
      }
      d.probs[it->second] += d.pc(j);
    }
    return d;
  }

  static double token_prob(const StepDist& d, const std::string& tok) {
    for (std::size_t k = 0; k < d.candidates.size(); ++k)
      if (d.candidates[k] == tok) return d.probs[k];
    throw InfeasibleToken("token not producible here: " + tok);
  }

  void advance(DecodeState& st, const std::string& tok, const StepDist& d) const {
    st.q = d.q;
    st.m = d.lstm.c;
    st.prev_pc = d.pc;
    st.prev_token = tok;
  }

  std::vector<DecTape> run_decoder_teacher(const EncodedQuestion& enc,
                                           const std::vector<std::string>& tokens) const {
    std::vector<DecTape> steps;
    steps.reserve(tokens.size());
    DecodeState st = initial_state(enc);
    for (const std::string& tok : tokens) {
      DecTape tape;
      tape.dist = step_distribution(enc, st);
      tape.before = st;  // step_distribution filled the selective-read fields
      double p = 0.0;
      if (const auto op = op_index_.find(tok); op != op_index_.end()) {
        tape.gen_hits.push_back(op->second);
        p += tape.dist.pg(op->second);
      }
      for (int j = 0; j < static_cast<int>(enc.tokens.size()); ++j)
        if (enc.tokens[j] == tok) {
          tape.copy_hits.push_back(j);
          p += tape.dist.pc(j);
        }
      if (tape.gen_hits.empty() && tape.copy_hits.empty())
        throw InfeasibleToken("token not producible here: " + tok);
      tape.p_tok = p;
      advance(st, tok, tape.dist);
      steps.push_back(std::move(tape));
    }
    return steps;
  }

  void backward(const EncoderTape& etape, const std::vector<DecTape>& steps, double weight,
                PolicyGrads& g) const {
    const int T = static_cast<int>(etape.ids.size());
    const int h = cfg_.d_q / 2;

    Eigen::MatrixXd dmem = Eigen::MatrixXd::Zero(T, cfg_.d_q);
    Eigen::VectorXd dq_next = Eigen::VectorXd::Zero(cfg_.d_q);
    Eigen::VectorXd dm_next = Eigen::VectorXd::Zero(cfg_.d_q);
    Eigen::VectorXd dpc_next = Eigen::VectorXd::Zero(T);  // via the next step's selective read

    for (int t = static_cast<int>(steps.size()) - 1; t >= 0; --t) {
      const DecTape& tape = steps[t];
      const StepDist& d = tape.dist;
      const DecodeState& before = tape.before;
      const int n_ops = static_cast<int>(ops_.size());

      // d(weight * log p) / d(posteriors), plus whatever the next step's
      // selective read sent back into this step's copy posteriors.
      Eigen::VectorXd dpg = Eigen::VectorXd::Zero(n_ops);
      Eigen::VectorXd dpc = dpc_next;
      const double inv_p = weight / tape.p_tok;
      for (const int i : tape.gen_hits) dpg(i) += inv_p;
      for (const int j : tape.copy_hits) dpc(j) += inv_p;

      // Shared softmax backward over all slots.
      const double dot = dpg.dot(d.pg) + dpc.dot(d.pc);
      const Eigen::VectorXd dsg = d.pg.cwiseProduct(dpg) - dot * d.pg;
      const Eigen::VectorXd dsc = d.pc.cwiseProduct(dpc) - dot * d.pc;

      Eigen::VectorXd dq = dq_next;

      // Generate path: psi_g = V_out (W_o q).
      g.V_out += dsg * d.w_oq.transpose();
      const Eigen::VectorXd dw_oq = params_.V_out.transpose() * dsg;
      g.W_o += dw_oq * d.q.transpose();
      dq += params_.W_o.transpose() * dw_oq;

      // Copy path: psi_c = tanh(memory W_c) q.
      dq += d.phi_c.transpose() * dsc;
      const Eigen::MatrixXd dA =
          (dsc * d.q.transpose()).cwiseProduct((1.0 - d.phi_c.array().square()).matrix());
      g.W_c += etape.memory.transpose() * dA;
      dmem += dA * params_.W_c.transpose();

      Eigen::VectorXd dy, dq_prev, dm_prev;
      detail::lstm_backward(params_.dec, d.lstm, dq, dm_next, g.dec, dy, dq_prev, dm_prev);
      const Eigen::VectorXd dphi = dy.head(cfg_.d_e);
      const Eigen::VectorXd dr = dy.segment(cfg_.d_e, cfg_.d_q);
      const Eigen::VectorXd dctx = dy.tail(cfg_.d_q);

      // Previous-token embedding is trainable only for operators and GO;
      // copied tokens use the frozen input table.
      if (before.prev_token.empty()) {
        g.embed_out.row(go_row()) += dphi.transpose();
      } else if (const auto op = op_index_.find(before.prev_token); op != op_index_.end()) {
        g.embed_out.row(op->second) += dphi.transpose();
      }

      // Attention backward: c = memory^T alpha, score = memory (W_a q_prev).
      const Eigen::VectorXd dalpha = etape.memory * dctx;
      const double adot = dalpha.dot(d.alpha);
      const Eigen::VectorXd dscore = d.alpha.cwiseProduct(dalpha) - adot * d.alpha;
      dmem += d.alpha * dctx.transpose();
      const Eigen::VectorXd es = etape.memory.transpose() * dscore;
      g.W_a += es * before.q.transpose();
      dq_prev += params_.W_a.transpose() * es;

      // Selective read backward: r = sum_k rho_k e_match[k] with
      // rho = prev_pc(match) / sum(prev_pc(match)).
      Eigen::VectorXd dpc_prev = Eigen::VectorXd::Zero(T);
      if (!before.match.empty()) {
        double norm = 0.0;
        for (const int j : before.match) norm += before.prev_pc(j);
        if (norm > 0.0) {
          const int m = static_cast<int>(before.match.size());
          Eigen::VectorXd drho(m);
          for (int k = 0; k < m; ++k) {
            drho(k) = dr.dot(etape.memory.row(before.match[k]));
            dmem.row(before.match[k]) += before.rho(k) * dr.transpose();
          }
          const double rdot = drho.dot(before.rho);
          for (int k = 0; k < m; ++k) dpc_prev(before.match[k]) = (drho(k) - rdot) / norm;
        }
      }

      dq_next = dq_prev;
      dm_next = dm_prev;
      dpc_next = dpc_prev;
    }

    // Bridge: q0 = tanh(W_b u + b_b).
    const Eigen::VectorXd dzb = dq_next.cwiseProduct((1.0 - etape.q0.array().square()).matrix());
    g.W_b += dzb * etape.bridge_in.transpose();
    g.b_b += dzb;
    const Eigen::VectorXd dbridge = params_.W_b.transpose() * dzb;

    // Encoder BPTT: the forward direction ran i=0..T-1 and fed hF(T-1) to
    // the bridge, the backward direction ran i=T-1..0 and fed hB(0).
    Eigen::VectorXd dh_carry = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd dc_carry = Eigen::VectorXd::Zero(h);
    for (int i = T - 1; i >= 0; --i) {
      Eigen::VectorXd dh = dmem.row(i).head(h).transpose() + dh_carry;
      if (i == T - 1) dh += dbridge.head(h);
      Eigen::VectorXd dx, dh_prev, dc_prev;
      detail::lstm_backward(params_.enc_f, etape.fwd[i], dh, dc_carry, g.enc_f, dx, dh_prev,
                            dc_prev);
      dh_carry = dh_prev;
      dc_carry = dc_prev;  // dx is dropped: embeddings are frozen
    }
    dh_carry.setZero();
    dc_carry.setZero();
    for (int i = 0; i < T; ++i) {
      Eigen::VectorXd dh = dmem.row(i).tail(h).transpose() + dh_carry;
      if (i == 0) dh += dbridge.tail(h);
      Eigen::VectorXd dx, dh_prev, dc_prev;
      detail::lstm_backward(params_.enc_b, etape.bwd[i], dh, dc_carry, g.enc_b, dx, dh_prev,
                            dc_prev);
      dh_carry = dh_prev;
      dc_carry = dc_prev;
    }
  }

  static nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  }

  static Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const std::size_t rows = j.size();
    const std::size_t cols = rows == 0 ? 0 : j[0].size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    return m;
  }
};

}  // namespace kbqa
