#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "json.hpp"
#include "sfcp/agents/replay.hpp"
#include "sfcp/diffcomp/layers.hpp"
#include "sfcp/policy.hpp"

namespace sfcp {

enum class DqnMode { Parallel, Sequential };

struct DdqnConfig {
    std::size_t hidden = 384;
    std::size_t blocks = 2;
    double gamma = 0.99;
    double lr = 1e-4;
    double tau = 1e-3;
    std::size_t batch = 256;
    std::size_t buffer_capacity = 1000000;
    bool normalize_rewards = true;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    EpsilonSchedule epsilon;
};

void to_json(nlohmann::json& j, const DdqnConfig& c);
void from_json(const nlohmann::json& j, DdqnConfig& c);

/// x + W2 gelu(W1 LN(x)).
struct ResidualBlock {
    dc::LayerNorm ln;
    dc::Linear fc1, fc2;
};

/// Input projection to the hidden width plus the chain-position encoding,
/// residual blocks, final layer norm, and a head with one Q value per DC.
struct QNet {
    QNet() = default;
    QNet(const std::string& name, std::size_t d_in, std::size_t m, std::size_t hidden, std::size_t blocks, Rng& rng);

    dc::Linear proj;
    std::vector<ResidualBlock> blocks;
    dc::LayerNorm final_ln;
    dc::Linear head;

    std::size_t input_dim() const { return proj.in(); }
    /// One row of Q values per feature row; positions are chain indices.
    dc::Var forward(dc::Tape& t, dc::Var features, const std::vector<std::size_t>& positions);
    dc::Mat q_values(const dc::Mat& features, const std::vector<std::size_t>& positions);
    dc::ParamList params();
};

/// Feature row for VNF i: the state row, followed in sequential mode by the
/// one-hot of the previous VNF's DC (zeros for the first VNF).
dc::Mat vnf_features(const StateMatrix& s, std::size_t i, DqnMode mode, std::size_t m,
                     std::optional<DcIndex> prev);

/// Lowest index among the maxima.
DcIndex argmax_row(const dc::Mat& q, Eigen::Index row);

struct VnfTransition {
    dc::Mat features;  // 1 x f
    std::size_t position = 0;
    DcIndex action = 0;
    double reward = 0.0;  // normalized, shared by every VNF of a request
    std::shared_ptr<const StateMatrix> s_next;  // null when terminal
    bool terminal = false;
};

Assignment select_parallel(QNet& net, const StateMatrix& s, double eps, std::size_t m, Rng& rng);
Assignment select_sequential(QNet& net, const StateMatrix& s, double eps, std::size_t m, Rng& rng);

/// y = r + gamma * mean over next-request VNFs of Q_target(s'_v, argmax Q_online(s'_v)).
std::vector<double> ddqn_targets(const std::vector<const VnfTransition*>& batch, double gamma, DqnMode mode,
                                 std::size_t m, QNet& online, QNet& target);

class DdqnAgent : public Policy {
public:
    DdqnAgent(std::size_t num_dcs, DqnMode mode, const DdqnConfig& cfg, std::uint64_t seed);
    DdqnAgent(const DdqnAgent&) = delete;
    DdqnAgent& operator=(const DdqnAgent&) = delete;

    std::string name() const override { return mode_ == DqnMode::Parallel ? "paraddqn" : "seqddqn"; }
    Assignment decide(const SfcEnv& env) override;

    Assignment select(const StateMatrix& s, double eps);
    /// Stores one transition per VNF of the request.
    void remember(const StateMatrix& s, const Assignment& a, double raw_reward, const StateMatrix& s_next,
                  bool terminal);
    /// MSE on taken-action Q values; nullopt while the buffer is underfilled.
    std::optional<double> train_step();

    DqnMode mode() const { return mode_; }
    EpsilonSchedule& epsilon() { return cfg_.epsilon; }
    const DdqnConfig& config() const { return cfg_; }
    const ReplayBuffer<VnfTransition>& buffer() const { return buffer_; }
    QNet& online() { return online_; }
    QNet& target() { return target_; }
    Rng& rng() { return rng_; }
    /// Sampled batch of the last train_step (for inspection).
    const std::vector<const VnfTransition*>& last_batch() const { return last_batch_; }

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

private:
    std::size_t m_;
    DqnMode mode_;
    DdqnConfig cfg_;
    Rng rng_;
    QNet online_, target_;
    dc::AdamW opt_;
    ReplayBuffer<VnfTransition> buffer_;
    std::vector<const VnfTransition*> last_batch_;
};

struct DqnEpisodeStats {
    std::size_t requests = 0;
    std::size_t accepted = 0;
    std::size_t train_steps = 0;
    double mean_loss = 0.0;
    double epsilon = 0.0;
};

DqnEpisodeStats ddqn_episode(SfcEnv& env, DdqnAgent& agent);

}  // namespace sfcp
