#pragma once

// The policy zoo: LSTM baseline, XXL-decoder LSTM, hierarchical LSTM,
// transformer-LSTM (default / large / hierarchical) and the flat
// transformer ablation, all as declarative configurations over the
// tensor core.

#include <deque>
#include <map>
#include <memory>
#include <string>

#include "gridhack/bot/bot.hpp"
#include "gridhack/data/batch.hpp"
#include "gridhack/nn/checkpoint.hpp"
#include "gridhack/nn/ops.hpp"
#include "gridhack/nn/optim.hpp"

namespace gridhack::policy {

enum class Family { Lstm, TransformerLstm, FlatTransformer };
enum class DecoderKind { Default, Xxl, Hierarchical };

enum class ForwardMode {
    Train,    // dropout on; hierarchical selection via Gumbel straight-through
    Eval,     // dropout off; hierarchical selection by detached argmax
    RlLearn,  // dropout off; detached argmax so RL cannot update the strategy head
};

struct ArchConfig {
    Family family = Family::Lstm;
    DecoderKind decoder = DecoderKind::Default;
    // Multiplies hidden dimensions; 1.0 reconstructs the full-scale
    // configuration, the desk default runs at a quarter width.
    double scale = 0.25;

    // Encoders (full-scale widths).
    int msg_hidden = 128;
    int msg_layers = 2;
    int msg_embed = 32;
    int stats_hidden = 128;
    int stats_layers = 4;
    int stats_conv_channels = 8;
    int crop_hidden = 512;
    int crop_layers = 5;  // 3 convs + 2 linears
    int crop_conv_channels = 32;
    int glyph_channels = 6;  // learned glyph embedding depth
    int action_embed = 128;
    bool use_prev_action = true;

    // Cores.
    int lstm_hidden = 512;
    int lstm_layers = 1;
    int tf_hidden = 1408;
    int tf_layers = 3;
    int tf_heads = 16;
    int tf_ff_mult = 2;
    int context_len = 64;
    double dropout = 0.1;

    // Decoders.
    int dec_hidden = 512;
    int dec_layers = 1;
    int xxl_hidden = 1024;
    int xxl_layers = 2;
    int hier_strat_hidden = 128;
    int hier_action_hidden = 256;
    int hier_action_layers = 2;

    double gumbel_tau = 1.0;

    int action_count = env::kActionCount;
    int label_space = bot::kLabelSpaceSize;
    std::string frozen_checkpoint;  // transformer-lstm only

    bool hierarchical() const { return decoder == DecoderKind::Hierarchical; }

    int scaled(int full) const {
        return std::max(4, static_cast<int>(std::lround(full * scale)));
    }
    int eff_heads() const { return std::max(1, static_cast<int>(std::lround(tf_heads * scale))); }
    int eff_tf_hidden() const {
        const int h = eff_heads();
        const int d = scaled(tf_hidden);
        return ((d + h - 1) / h) * h;
    }

    void validate() const;

    // The seven policy classes by name: lstm, lstm-xxl, hier-lstm,
    // tlstm, tlstm-large, hier-tlstm, flat-transformer.
    static ArchConfig preset(const std::string& name, double scale = 0.25);

    std::string describe() const;
};

template <typename S>
struct RecurrentStateT {
    int batch = 0;
    nn::ArrayX<S> h, c;    // trainable LSTM core (lstm family)
    nn::ArrayX<S> fh, fc;  // frozen recurrent encoder (transformer-lstm)
};

// Per-environment inference state: recurrent vectors plus the ring
// buffer of the last context_len post-projection embeddings.
template <typename S>
struct EpisodeStateT {
    RecurrentStateT<S> rec;
    std::deque<nn::ArrayX<S>> context;
    int prev_action = -1;  // -1 marks the episode start
    std::uint64_t steps = 0;
};

template <typename S>
struct PolicyOutputT {
    nn::Tensor<S> action_logits;    // [N, A]
    nn::Tensor<S> strategy_logits;  // valid only for hierarchical decoders
    nn::Tensor<S> value;            // [N, 1]
};

struct ActResult {
    int action = 0;
    int strategy = -1;              // argmax strategy for hierarchical policies
    double value = 0.0;
    double log_prob = 0.0;          // of the chosen action under softmax
    std::vector<float> action_logits;
};

template <typename S>
class PolicyT {
public:
    // A validated config builds deterministically from the seed; the
    // frozen recurrent encoder, when the family requires one, loads from
    // cfg.frozen_checkpoint.
    PolicyT(ArchConfig cfg, std::uint64_t init_seed);

    const ArchConfig& config() const { return cfg_; }
    nn::ParamStore<S>& params() { return params_; }
    const nn::ParamStore<S>& params() const { return params_; }
    const nn::ParamStore<S>& frozen_params() const { return frozen_; }

    std::int64_t trainable_param_count() const { return params_.total_size(); }
    std::int64_t frozen_param_count() const { return frozen_.total_size(); }

    RecurrentStateT<S> initial_state(int batch) const;
    EpisodeStateT<S> begin_episode() const;

    // Batched window forward over time-major rows. Mutates `state` to the
    // carried-over post-window recurrent state. force_strategy, when
    // non-null, bypasses selection with ground-truth labels (oracle and
    // test hook).
    PolicyOutputT<S> forward_window(nn::Tape<S>& tape, const data::UnrollBatch& batch,
                                    RecurrentStateT<S>& state, ForwardMode mode, Rng& rng,
                                    const std::vector<int>* force_strategy = nullptr) const;

    // Single-step acting. sample=false takes the argmax action.
    ActResult act(const data::FrameFeatures& obs, EpisodeStateT<S>& state, bool sample,
                  Rng& rng) const;

    std::uint64_t frozen_checksum() const { return frozen_.checksum(); }

private:
    struct FrozenStep;
    void build_params();
    void build_encoder_params(nn::ParamStore<S>& store, Rng& rng) const;
    nn::Tensor<S> encode(nn::Tape<S>& tape, nn::ParamStore<S>& store,
                         const data::UnrollBatch& batch) const;
    nn::Tensor<S> run_lstm(nn::Tape<S>& tape, nn::ParamStore<S>& store, nn::Tensor<S> enc,
                           const data::UnrollBatch& batch, nn::ArrayX<S>& h, nn::ArrayX<S>& c,
                           int hidden) const;
    nn::Tensor<S> run_transformer(nn::Tape<S>& tape, nn::Tensor<S> proj,
                                  const data::UnrollBatch& batch, ForwardMode mode,
                                  Rng& rng) const;
    PolicyOutputT<S> decode(nn::Tape<S>& tape, nn::Tensor<S> core, ForwardMode mode, Rng& rng,
                            const std::vector<int>* force_strategy) const;

    ArchConfig cfg_;
    nn::ParamStore<S> params_;
    nn::ParamStore<S> frozen_;
    int enc_dim_ = 0;
};

using Policy = PolicyT<float>;
using RecurrentState = RecurrentStateT<float>;
using EpisodeState = EpisodeStateT<float>;

// Normalization applied to raw blstats before the stats encoder; fixed
// so checkpoints stay comparable.
inline constexpr double kBlstatsScale[env::BlStats::kFieldCount] = {
    79.0, 20.0, 30.0, 30.0, 500.0, 8.0, 5000.0, 1000.0,
    2000.0, 4.0, 50.0, 20.0, 10.0, 50.0, 10.0, 1.0,
};

inline constexpr int kCropVocab = 128;  // printable ASCII + OOB zero
inline constexpr int kMsgVocab = 128;

}  // namespace gridhack::policy
