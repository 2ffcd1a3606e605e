#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "sfcp/agents/replay.hpp"
#include "sfcp/diffcomp/layers.hpp"
#include "sfcp/policy.hpp"

namespace sfcp {

struct SdacConfig {
    dc::EncoderShape actor{128, 8, 512, 3};
    dc::EncoderShape critic{128, 8, 512, 3};
    double gamma = 0.99;
    double lr_actor = 1e-5;
    double lr_critic = 1e-4;
    double tau = 1e-3;
    std::size_t batch = 256;
    std::size_t buffer_capacity = 1000000;
    double noise_scale = 2.0;  // c in the perturbation eps * c * eta
    bool normalize_rewards = true;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    EpsilonSchedule epsilon;
};

void to_json(nlohmann::json& j, const SdacConfig& c);
void from_json(const nlohmann::json& j, SdacConfig& c);

/// r' = (1 - gamma) r.
double arn_normalize(double reward, double gamma);

/// Row-wise z-score (population sigma, floored at 1e-8), plus eps * c * N(0, 1)
/// noise, then softmax.
dc::Mat epsilon_lope(const dc::Mat& logits, double eps, double c, Rng& rng);

struct SeqTransition {
    StateMatrix s;
    ActionMatrix a;  // relaxed rows actually executed
    double reward = 0.0;  // already normalized when ARN is on
    StateMatrix s_next;   // empty when terminal
    bool terminal = false;
};

struct SdacActor {
    SdacActor() = default;
    SdacActor(const std::string& name, std::size_t d_in, std::size_t m, const dc::EncoderShape& shape, Rng& rng);

    dc::Encoder encoder;
    dc::Linear head;

    dc::Var logits(dc::Tape& t, dc::Var states, const dc::SeqLayout& layout);
    dc::ParamList params();
};

struct SdacCritic {
    SdacCritic() = default;
    SdacCritic(const std::string& name, std::size_t d_in, std::size_t m, const dc::EncoderShape& shape, Rng& rng);

    dc::Encoder encoder;
    dc::Linear head;

    /// One Q value per sequence (sequences x 1).
    dc::Var q(dc::Tape& t, dc::Var states, dc::Var actions, const dc::SeqLayout& layout);
    dc::ParamList params();
};

/// Logits of a single request.
dc::Mat actor_logits(SdacActor& actor, const StateMatrix& s);
/// Q of a single (S, A); every row of A must be on the simplex within 1e-6.
double critic_forward(SdacCritic& critic, const StateMatrix& s, const ActionMatrix& a);

struct SdacLosses {
    double critic = 0.0;
    double actor = 0.0;
};

class SdacAgent : public Policy {
public:
    SdacAgent(std::size_t num_dcs, const SdacConfig& cfg, std::uint64_t seed);
    // optimizers hold pointers into the networks
    SdacAgent(const SdacAgent&) = delete;
    SdacAgent& operator=(const SdacAgent&) = delete;

    std::string name() const override { return cfg_.normalize_rewards ? "sdac" : "sdac-noarn"; }
    /// Greedy decision (argmax of logits).
    Assignment decide(const SfcEnv& env) override;

    /// Perturbed relaxed actions for exploration at the current epsilon.
    ActionMatrix explore(const StateMatrix& s);
    double scaled_reward(double raw) const;
    void remember(SeqTransition t) { buffer_.push(std::move(t)); }
    /// One critic and one actor update plus target sync; nullopt while the
    /// buffer holds fewer than a batch.
    std::optional<SdacLosses> train_step();
    /// Bellman targets for the given transitions from the target networks.
    std::vector<double> targets(const std::vector<const SeqTransition*>& batch);

    EpsilonSchedule& epsilon() { return cfg_.epsilon; }
    const SdacConfig& config() const { return cfg_; }
    const ReplayBuffer<SeqTransition>& buffer() const { return buffer_; }
    std::size_t num_dcs() const { return m_; }
    Rng& rng() { return rng_; }
    /// Sampled batch of the last train_step (for inspection).
    const std::vector<const SeqTransition*>& last_batch() const { return last_batch_; }

    SdacActor& actor() { return actor_; }
    SdacCritic& critic() { return critic_; }
    SdacActor& actor_target() { return actor_target_; }
    SdacCritic& critic_target() { return critic_target_; }

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

private:
    std::size_t m_;
    SdacConfig cfg_;
    Rng rng_;
    SdacActor actor_, actor_target_;
    SdacCritic critic_, critic_target_;
    dc::AdamW opt_actor_, opt_critic_;
    ReplayBuffer<SeqTransition> buffer_;
    std::vector<const SeqTransition*> last_batch_;
};

struct EpisodeStats {
    std::size_t requests = 0;
    std::size_t accepted = 0;
    std::size_t train_steps = 0;
    double mean_critic_loss = 0.0;
    double mean_actor_loss = 0.0;
    double epsilon = 0.0;
};

/// One training pass over the env's workload from reset; ends with an
/// epsilon decrement.
EpisodeStats sdac_episode(SfcEnv& env, SdacAgent& agent);

}  // namespace sfcp
