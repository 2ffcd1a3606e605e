#include "sfcp/agents/sdac.hpp"

#include <cmath>

#include "sfcp/diffcomp/checkpoint.hpp"

namespace sfcp {

using dc::Mat;
using dc::SeqLayout;
using dc::Tape;
using dc::Var;
using nlohmann::json;

namespace {

json shape_to_json(const dc::EncoderShape& s) {
    return {{"d_model", s.d_model}, {"heads", s.heads}, {"mlp", s.mlp}, {"layers", s.layers}};
}

dc::EncoderShape shape_from_json(const json& j, const dc::EncoderShape& d) {
    return {j.value("d_model", d.d_model), j.value("heads", d.heads), j.value("mlp", d.mlp),
            j.value("layers", d.layers)};
}

// Stacks per-sequence matrices into one packed matrix.
template <typename Get>
Mat stack(const std::vector<const SeqTransition*>& batch, Get get, SeqLayout* layout) {
    std::vector<std::size_t> lengths;
    Eigen::Index rows = 0, cols = 0;
    for (const auto* t : batch) {
        const Mat& m = get(*t);
        lengths.push_back(static_cast<std::size_t>(m.rows()));
        rows += m.rows();
        cols = m.cols();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const auto* t : batch) {
        const Mat& m = get(*t);
        out.middleRows(r, m.rows()) = m;
        r += m.rows();
    }
    if (layout != nullptr) *layout = SeqLayout::packed(lengths);
    return out;
}

dc::AdamWConfig adam(const SdacConfig& c, double lr) { return {lr, c.adam_beta1, c.adam_beta2, c.adam_eps, c.weight_decay}; }

json moments_to_json(const dc::AdamW& opt) {
    json out = json::array();
    for (const auto& mo : opt.moments()) out.push_back({{"m", dc::mat_to_json(mo.m)}, {"v", dc::mat_to_json(mo.v)}});
    return {{"steps", opt.steps()}, {"moments", out}};
}

void moments_from_json(const json& j, dc::AdamW& opt) {
    const auto& arr = j.at("moments");
    if (arr.size() != opt.moments().size()) throw GenerationError("optimizer state size mismatch");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        opt.moments()[i].m = dc::mat_from_json(arr[i].at("m"));
        opt.moments()[i].v = dc::mat_from_json(arr[i].at("v"));
    }
    opt.set_steps(j.at("steps").get<long>());
}

}  // namespace

void to_json(json& j, const SdacConfig& c) {
    j = {{"actor", shape_to_json(c.actor)},
         {"critic", shape_to_json(c.critic)},
         {"gamma", c.gamma},
         {"lr_actor", c.lr_actor},
         {"lr_critic", c.lr_critic},
         {"tau", c.tau},
         {"batch", c.batch},
         {"buffer_capacity", c.buffer_capacity},
         {"noise_scale", c.noise_scale},
         {"normalize_rewards", c.normalize_rewards},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},
         {"adam_eps", c.adam_eps},
         {"weight_decay", c.weight_decay},
         {"epsilon_start", c.epsilon.start},
         {"epsilon_decrement", c.epsilon.decrement},
         {"epsilon_floor", c.epsilon.floor}};
}

void from_json(const json& j, SdacConfig& c) {
    const SdacConfig d;
    c.actor = shape_from_json(j.value("actor", json::object()), d.actor);
    c.critic = shape_from_json(j.value("critic", json::object()), d.critic);
    c.gamma = j.value("gamma", d.gamma);
    c.lr_actor = j.value("lr_actor", d.lr_actor);
    c.lr_critic = j.value("lr_critic", d.lr_critic);
    c.tau = j.value("tau", d.tau);
    c.batch = j.value("batch", d.batch);
    c.buffer_capacity = j.value("buffer_capacity", d.buffer_capacity);
    c.noise_scale = j.value("noise_scale", d.noise_scale);
    c.normalize_rewards = j.value("normalize_rewards", d.normalize_rewards);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.epsilon.start = j.value("epsilon_start", d.epsilon.start);
    c.epsilon.decrement = j.value("epsilon_decrement", d.epsilon.decrement);
    c.epsilon.floor = j.value("epsilon_floor", d.epsilon.floor);
    c.epsilon.value = c.epsilon.start;
}

double arn_normalize(double reward, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw UsageError("discount must lie strictly between 0 and 1");
    return (1.0 - gamma) * reward;
}

Mat epsilon_lope(const Mat& logits, double eps, double c, Rng& rng) {
    if (eps < 0.0 || eps > 1.0) throw UsageError("epsilon must lie in [0, 1]");
    std::normal_distribution<double> noise(0.0, 1.0);
    Mat z(logits.rows(), logits.cols());
    const double m = static_cast<double>(logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mu = logits.row(i).sum() / m;
        const double sd = std::max(std::sqrt((logits.row(i).array() - mu).square().sum() / m), 1e-8);
        z.row(i) = (logits.row(i).array() - mu) / sd;
        if (eps > 0.0)
            for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) += eps * c * noise(rng);
    }
    return dc::softmax_rows(z);
}

SdacActor::SdacActor(const std::string& name, std::size_t d_in, std::size_t m, const dc::EncoderShape& shape,
                     Rng& rng)
    : encoder(name + ".enc", d_in, shape, dc::NormPlacement::Pre, rng), head(name + ".head", shape.d_model, m, rng) {}

Var SdacActor::logits(Tape& t, Var states, const SeqLayout& layout) { return head(t, encoder(t, states, layout)); }

dc::ParamList SdacActor::params() {
    dc::ParamList ps;
    encoder.collect(ps);
    head.collect(ps);
    return ps;
}

SdacCritic::SdacCritic(const std::string& name, std::size_t d_in, std::size_t m, const dc::EncoderShape& shape,
                       Rng& rng)
    : encoder(name + ".enc", d_in + m, shape, dc::NormPlacement::Pre, rng), head(name + ".head", shape.d_model, 1, rng) {}

Var SdacCritic::q(Tape& t, Var states, Var actions, const SeqLayout& layout) {
    return head(t, dc::mean_pool(encoder(t, dc::concat_cols(states, actions), layout), layout));
}

dc::ParamList SdacCritic::params() {
    dc::ParamList ps;
    encoder.collect(ps);
    head.collect(ps);
    return ps;
}

Mat actor_logits(SdacActor& actor, const StateMatrix& s) {
    Tape t(false);
    return actor.logits(t, t.constant(s), SeqLayout::single(static_cast<std::size_t>(s.rows()))).value();
}

double critic_forward(SdacCritic& critic, const StateMatrix& s, const ActionMatrix& a) {
    if (a.rows() != s.rows()) throw UsageError("action rows differ from state rows");
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        if (a.row(i).minCoeff() < -1e-6 || std::abs(a.row(i).sum() - 1.0) > 1e-6)
            throw UsageError("action row is not on the simplex");
    Tape t(false);
    return critic.q(t, t.constant(s), t.constant(a), SeqLayout::single(static_cast<std::size_t>(s.rows()))).value()(0, 0);
}

SdacAgent::SdacAgent(std::size_t num_dcs, const SdacConfig& cfg, std::uint64_t seed)
    : m_(num_dcs), cfg_(cfg), rng_(make_rng(seed, 101)), buffer_(cfg.buffer_capacity) {
    if (num_dcs < 2) throw UsageError("relaxed actions need at least two DCs");
    const std::size_t d_in = state_dim(num_dcs);
    Rng init = make_rng(seed, 102);
    actor_ = SdacActor("actor", d_in, m_, cfg_.actor, init);
    critic_ = SdacCritic("critic", d_in, m_, cfg_.critic, init);
    actor_target_ = actor_;
    critic_target_ = critic_;
    opt_actor_ = dc::AdamW(actor_.params(), adam(cfg_, cfg_.lr_actor));
    opt_critic_ = dc::AdamW(critic_.params(), adam(cfg_, cfg_.lr_critic));
    cfg_.epsilon.reset();
}

Assignment SdacAgent::decide(const SfcEnv& env) { return decode_actions(actor_logits(actor_, env.state())); }

ActionMatrix SdacAgent::explore(const StateMatrix& s) {
    return epsilon_lope(actor_logits(actor_, s), cfg_.epsilon.value, cfg_.noise_scale, rng_);
}

double SdacAgent::scaled_reward(double raw) const {
    return cfg_.normalize_rewards ? arn_normalize(raw, cfg_.gamma) : raw;
}

std::vector<double> SdacAgent::targets(const std::vector<const SeqTransition*>& batch) {
    std::vector<double> y(batch.size());
    std::vector<const SeqTransition*> live;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i]->reward;
        if (!batch[i]->terminal) live.push_back(batch[i]);
    }
    if (live.empty()) return y;
    SeqLayout layout;
    Mat s_next = stack(live, [](const SeqTransition& t) -> const Mat& { return t.s_next; }, &layout);
    Tape t(false);
    Var sv = t.constant(std::move(s_next));
    Var a_next = dc::softmax(actor_target_.logits(t, sv, layout));
    const Mat& q = critic_target_.q(t, sv, a_next, layout).value();
    for (std::size_t i = 0, k = 0; i < batch.size(); ++i)
        if (!batch[i]->terminal) y[i] += cfg_.gamma * q(static_cast<Eigen::Index>(k++), 0);
    return y;
}

std::optional<SdacLosses> SdacAgent::train_step() {
    if (buffer_.size() < cfg_.batch) return std::nullopt;
    last_batch_ = buffer_.sample(cfg_.batch, rng_);
    const auto& batch = last_batch_;
    const auto y = targets(batch);
    Mat target(static_cast<Eigen::Index>(y.size()), 1);
    for (std::size_t i = 0; i < y.size(); ++i) target(static_cast<Eigen::Index>(i), 0) = y[i];

    SeqLayout layout;
    Mat s = stack(batch, [](const SeqTransition& t) -> const Mat& { return t.s; }, &layout);
    Mat a = stack(batch, [](const SeqTransition& t) -> const Mat& { return t.a; }, nullptr);

    SdacLosses out;
    {
        auto ps = critic_.params();
        dc::zero_grads(ps);
        Tape t;
        Var loss = dc::mse(critic_.q(t, t.constant(s), t.constant(a), layout), target);
        t.backward(loss);
        opt_critic_.step();
        out.critic = loss.value()(0, 0);
    }
    {
        auto ps = actor_.params();
        dc::zero_grads(ps);
        Tape t;
        Var sv = t.constant(s);
        Var act = dc::softmax(actor_.logits(t, sv, layout));
        Var q;
        {
            Tape::FreezeGuard frozen(t);
            q = critic_.q(t, sv, act, layout);
        }
        Var loss = dc::scale(dc::mean(q), -1.0);
        t.backward(loss);
        opt_actor_.step();
        out.actor = loss.value()(0, 0);
    }
    dc::polyak_update(actor_target_.params(), actor_.params(), cfg_.tau);
    dc::polyak_update(critic_target_.params(), critic_.params(), cfg_.tau);
    return out;
}

void SdacAgent::save(const std::filesystem::path& path) {
    // targets share parameter names with the online nets, so they go under extra
    json extra = {{"epsilon", cfg_.epsilon.value},
                  {"config", cfg_},
                  {"num_dcs", m_},
                  {"actor_target", dc::params_to_json(actor_target_.params())},
                  {"critic_target", dc::params_to_json(critic_target_.params())},
                  {"opt_actor", moments_to_json(opt_actor_)},
                  {"opt_critic", moments_to_json(opt_critic_)}};
    dc::ParamList online = actor_.params();
    auto c = critic_.params();
    online.insert(online.end(), c.begin(), c.end());
    dc::save_checkpoint(path, online, extra);
}

void SdacAgent::load(const std::filesystem::path& path) {
    dc::ParamList online = actor_.params();
    auto c = critic_.params();
    online.insert(online.end(), c.begin(), c.end());
    json extra = dc::load_checkpoint(path, online);
    dc::params_from_json(extra.at("actor_target"), actor_target_.params());
    dc::params_from_json(extra.at("critic_target"), critic_target_.params());
    moments_from_json(extra.at("opt_actor"), opt_actor_);
    moments_from_json(extra.at("opt_critic"), opt_critic_);
    cfg_.epsilon.value = extra.at("epsilon").get<double>();
}

EpisodeStats sdac_episode(SfcEnv& env, SdacAgent& agent) {
    EpisodeStats st;
    st.epsilon = agent.epsilon().value;
    StateMatrix s = env.reset();
    while (!env.done()) {
        ActionMatrix a = agent.explore(s);
        StepResult res = env.step(a);
        ++st.requests;
        if (res.outcome.accepted()) ++st.accepted;
        agent.remember({s, a, agent.scaled_reward(res.reward), res.next_state, res.done});
        if (auto l = agent.train_step()) {
            ++st.train_steps;
            st.mean_critic_loss += l->critic;
            st.mean_actor_loss += l->actor;
        }
        s = std::move(res.next_state);
    }
    if (st.train_steps > 0) {
        st.mean_critic_loss /= static_cast<double>(st.train_steps);
        st.mean_actor_loss /= static_cast<double>(st.train_steps);
    }
    agent.epsilon().end_episode();
    return st;
}

}  // namespace sfcp
