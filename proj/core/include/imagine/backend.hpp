#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imagine/mat.hpp"
#include "imagine/types.hpp"

namespace imagine::backend {

enum class Mode { encoder, decoder };
enum class Adapter { none, lm, itm };

/// Configuration of the frozen toy backbone. The seed fully determines every
/// frozen weight; two backbones with equal configs are bitwise identical.
struct EncoderConfig {
  Mode mode = Mode::encoder;
  int layers = 2;
  int hidden_dim = 64;  // d_t
  int heads = 4;
  int vocab_size = 256;
  int max_len = 64;  // m_max, counts the internal [CLS]/[BOS] slot
  uint64_t seed = 0x1a2b3c4d5e6f7081ull;

  int visual_dim = 32;   // d_v, width of the projected text/visual space
  int reduction = 16;    // adapter bottleneck = hidden_dim / reduction

  int bottleneck() const { return hidden_dim / reduction > 0 ? hidden_dim / reduction : 1; }
  int ff_dim() const { return 2 * hidden_dim; }
  void validate() const;
};

/// The only trainable parameters: one bottleneck pair per layer for each of
/// the two adapters, plus the text->visual projection owned by the ITM
/// adapter. Up-projections start at zero so the adapted model initially
/// equals the frozen backbone; down-projections and the projection are
/// seeded from the config.
struct AdapterParams {
  struct Bottleneck {
    Mat down;  // d_t x b
    Mat up;    // b x d_t
  };
  std::vector<Bottleneck> lm;
  std::vector<Bottleneck> itm;
  Mat w_p;  // d_t x d_v

  static AdapterParams init(const EncoderConfig& cfg);
  static AdapterParams zeros_like(const AdapterParams& shape);

  void check_compatible(const EncoderConfig& cfg) const;
  size_t param_count() const;
  uint64_t content_hash() const;

  /// y += alpha * x over every coordinate; shapes must match.
  void axpy(double alpha, const AdapterParams& x);
  void scale(double alpha);
};

/// Visits every parameter matrix in checkpoint order:
/// lm[0].down, lm[0].up, ..., itm[0].down, itm[0].up, ..., w_p.
template <typename P, typename Fn>
void visit_params(P& params, Fn&& fn) {
  for (auto& b : params.lm) {
    fn(b.down);
    fn(b.up);
  }
  for (auto& b : params.itm) {
    fn(b.down);
    fn(b.up);
  }
  fn(params.w_p);
}

struct HiddenStates {
  Mat token_states;             // m x d_t, rows for the m input tokens
  std::vector<double> context;  // d_t; [CLS] state (encoder) or last token state (decoder)
};

/// Hash-bucketed word tokenizer. Splits on whitespace and maps each word to
/// a bucket above the special-token range. Not a linguistic tokenizer; the
/// backbone defines its own closed vocabulary.
class Tokenizer {
 public:
  static constexpr int kCls = 0;
  static constexpr int kBos = 1;
  static constexpr int kMask = 2;
  static constexpr int kNumSpecial = 3;

  explicit Tokenizer(int vocab_size);
  std::vector<int> tokenize(std::string_view text) const;
  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_;
};

/// Saved activations of one forward pass, consumed by backward(). Opaque;
/// owned through WorkspacePtr.
struct Workspace;
struct WorkspaceDeleter {
  void operator()(Workspace*) const;
};
using WorkspacePtr = std::unique_ptr<Workspace, WorkspaceDeleter>;

/// Frozen deterministic transformer with per-layer parallel adapters on the
/// feed-forward sublayers. All non-adapter weights are generated once from
/// config.seed and never change.
///
/// Layer structure (pre-norm):
///   x <- x + Attention(LN1(x))
///   x <- x + FeedForward(LN2(x)) + AdapterUp * tanh(AdapterDown * LN2(x))
/// followed by a final LayerNorm and a linear vocabulary head. The adapter
/// reads the same normalized vector as the feed-forward block and its output
/// joins the residual stream in parallel with it. The adapter nonlinearity
/// is tanh (smooth and saturating; gradient checks rely on smoothness).
class Backbone {
 public:
  explicit Backbone(const EncoderConfig& cfg);
  ~Backbone();
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  /// Forward pass over raw token ids (no specials; the [CLS]/[BOS] slot is
  /// added internally). Throws on length overflow or adapter shape mismatch.
  HiddenStates encode(std::span<const int> tokens, Adapter route,
                      const AdapterParams& params) const;

  /// Log-probability vector over the vocabulary for the token at `position`.
  /// Encoder mode masks that position's input token; decoder mode conditions
  /// on strictly earlier tokens only.
  std::vector<double> token_log_probs(std::span<const int> tokens, int position, Adapter route,
                                      const AdapterParams& params) const;

  /// Forward pass that retains activations for backward(). mask_position
  /// applies encoder-style masking of one input token.
  WorkspacePtr forward(std::span<const int> tokens, Adapter route, const AdapterParams& params,
                       std::optional<int> mask_position = std::nullopt) const;

  /// Hidden-state rows of the retained pass, including the special slot at
  /// row 0. Row i+1 corresponds to tokens[i].
  const Mat& hidden(const Workspace& ws) const;

  /// Row index of the context vector inside hidden().
  int context_row(const Workspace& ws) const;

  /// Logits over the vocabulary at one internal row of the retained pass.
  std::vector<double> logits_at(const Workspace& ws, int row) const;

  /// Backpropagates d_hidden (same shape as hidden()) through the retained
  /// pass and accumulates adapter gradients for the routed adapter into
  /// `grads`. `d_logits`, when given, is a list of (row, dvec-over-vocab)
  /// contributions applied through the vocabulary head before the walk.
  void backward(const Workspace& ws, const Mat& d_hidden,
                const std::vector<std::pair<int, std::vector<double>>>& d_logits,
                const AdapterParams& params, AdapterParams& grads) const;

  /// FNV hash over every frozen weight; training asserts it is unchanged.
  uint64_t frozen_hash() const;

  /// Number of forward passes executed since construction (diagnostic; used
  /// to assert the masked-scoring cost contract).
  uint64_t forward_count() const { return forward_count_.load(std::memory_order_relaxed); }
  void reset_forward_count() const { forward_count_.store(0, std::memory_order_relaxed); }

 private:
  struct LayerWeights {
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
    Mat wq, wk, wv, wo;  // d x d
    Mat w1;              // d x f
    std::vector<double> b1;
    Mat w2;  // f x d
    std::vector<double> b2;
  };

  EncoderConfig cfg_;
  Tokenizer tokenizer_;
  Mat token_embed_;  // vocab x d
  Mat pos_embed_;    // max_len x d
  std::vector<LayerWeights> layers_;
  std::vector<double> lnf_g_, lnf_b_;
  Mat w_out_;  // d x vocab
  std::vector<double> b_out_;
  mutable std::atomic<uint64_t> forward_count_{0};

  void run_forward(Workspace& ws, std::span<const int> internal_ids, Adapter route,
                   const AdapterParams& params) const;
};

/// File-backed patch feature provider. The container is the embedding binary
/// format (dim = d_v, rows = concatenated patch blocks); the manifest maps
/// image_id -> (row offset, patch count) as tab-separated lines.
class FeatureProvider {
 public:
  static FeatureProvider load(const std::filesystem::path& features_bin,
                              const std::filesystem::path& manifest);
  /// In-memory construction, used by tests and dataset builders.
  explicit FeatureProvider(std::map<std::string, Mat> features);

  VisualFeatureSet get(const std::string& image_id) const;
  bool has(const std::string& image_id) const;
  int dim() const { return dim_; }
  std::vector<std::string> ids() const;

 private:
  FeatureProvider() = default;
  std::map<std::string, Mat> features_;
  int dim_ = 0;
};

void save_features(const std::filesystem::path& features_bin,
                   const std::filesystem::path& manifest,
                   const std::vector<std::pair<std::string, Mat>>& blocks);

}  // namespace imagine::backend
