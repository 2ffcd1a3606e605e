#include "sfcp/agents/ddqn.hpp"

#include <map>

#include "sfcp/diffcomp/checkpoint.hpp"

namespace sfcp {

using dc::Mat;
using dc::Tape;
using dc::Var;
using nlohmann::json;

void to_json(json& j, const DdqnConfig& c) {
    j = {{"hidden", c.hidden},
         {"blocks", c.blocks},
         {"gamma", c.gamma},
         {"lr", c.lr},
         {"tau", c.tau},
         {"batch", c.batch},
         {"buffer_capacity", c.buffer_capacity},
         {"normalize_rewards", c.normalize_rewards},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},
         {"adam_eps", c.adam_eps},
         {"weight_decay", c.weight_decay},
         {"epsilon_start", c.epsilon.start},
         {"epsilon_decrement", c.epsilon.decrement},
         {"epsilon_floor", c.epsilon.floor}};
}

void from_json(const json& j, DdqnConfig& c) {
    const DdqnConfig d;
    c.hidden = j.value("hidden", d.hidden);
    c.blocks = j.value("blocks", d.blocks);
    c.gamma = j.value("gamma", d.gamma);
    c.lr = j.value("lr", d.lr);
    c.tau = j.value("tau", d.tau);
    c.batch = j.value("batch", d.batch);
    c.buffer_capacity = j.value("buffer_capacity", d.buffer_capacity);
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

QNet::QNet(const std::string& name, std::size_t d_in, std::size_t m, std::size_t hidden, std::size_t nblocks,
           Rng& rng)
    : proj(name + ".proj", d_in, hidden, rng), final_ln(name + ".ln", hidden), head(name + ".head", hidden, m, rng) {
    for (std::size_t b = 0; b < nblocks; ++b) {
        const std::string p = name + ".block" + std::to_string(b);
        blocks.push_back({dc::LayerNorm(p + ".ln", hidden), dc::Linear(p + ".fc1", hidden, hidden, rng),
                          dc::Linear(p + ".fc2", hidden, hidden, rng)});
    }
}

Var QNet::forward(Tape& t, Var features, const std::vector<std::size_t>& positions) {
    if (static_cast<std::size_t>(features.cols()) != proj.in()) throw UsageError("Q-network feature width mismatch");
    if (static_cast<std::size_t>(features.rows()) != positions.size())
        throw UsageError("one chain position per feature row required");
    std::size_t longest = 0;
    for (std::size_t p : positions) longest = std::max(longest, p + 1);
    const Mat table = dc::sinusoidal_pe(longest, proj.out());
    Mat pe(features.rows(), static_cast<Eigen::Index>(proj.out()));
    for (std::size_t r = 0; r < positions.size(); ++r)
        pe.row(static_cast<Eigen::Index>(r)) = table.row(static_cast<Eigen::Index>(positions[r]));
    Var h = dc::add(proj(t, features), t.constant(std::move(pe)));
    for (auto& b : blocks) h = dc::add(h, b.fc2(t, dc::gelu(b.fc1(t, b.ln(t, h)))));
    return head(t, final_ln(t, h));
}

Mat QNet::q_values(const Mat& features, const std::vector<std::size_t>& positions) {
    Tape t(false);
    return forward(t, t.constant(features), positions).value();
}

dc::ParamList QNet::params() {
    dc::ParamList ps;
    proj.collect(ps);
    for (auto& b : blocks) {
        b.ln.collect(ps);
        b.fc1.collect(ps);
        b.fc2.collect(ps);
    }
    final_ln.collect(ps);
    head.collect(ps);
    return ps;
}

Mat vnf_features(const StateMatrix& s, std::size_t i, DqnMode mode, std::size_t m, std::optional<DcIndex> prev) {
    const Eigen::Index d = s.cols();
    const Eigen::Index extra = mode == DqnMode::Sequential ? static_cast<Eigen::Index>(m) : 0;
    Mat f = Mat::Zero(1, d + extra);
    f.leftCols(d) = s.row(static_cast<Eigen::Index>(i));
    if (mode == DqnMode::Sequential && prev) f(0, d + static_cast<Eigen::Index>(*prev)) = 1.0;
    return f;
}

DcIndex argmax_row(const Mat& q, Eigen::Index row) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < q.cols(); ++j)
        if (q(row, j) > q(row, best)) best = j;
    return static_cast<DcIndex>(best);
}

namespace {

DcIndex explore_or(DcIndex greedy, double eps, std::size_t m, Rng& rng) {
    if (eps <= 0.0) return greedy;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < eps) return std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    return greedy;
}

void check_eps(double eps) {
    if (eps < 0.0 || eps > 1.0) throw UsageError("epsilon must lie in [0, 1]");
}

}  // namespace

Assignment select_parallel(QNet& net, const StateMatrix& s, double eps, std::size_t m, Rng& rng) {
    check_eps(eps);
    const auto n = static_cast<std::size_t>(s.rows());
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    const Mat q = net.q_values(s, pos);
    Assignment a;
    for (std::size_t i = 0; i < n; ++i)
        a.targets.push_back(explore_or(argmax_row(q, static_cast<Eigen::Index>(i)), eps, m, rng));
    return a;
}

Assignment select_sequential(QNet& net, const StateMatrix& s, double eps, std::size_t m, Rng& rng) {
    check_eps(eps);
    Assignment a;
    std::optional<DcIndex> prev;
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.rows()); ++i) {
        const Mat q = net.q_values(vnf_features(s, i, DqnMode::Sequential, m, prev), {i});
        prev = explore_or(argmax_row(q, 0), eps, m, rng);
        a.targets.push_back(*prev);
    }
    return a;
}

std::vector<double> ddqn_targets(const std::vector<const VnfTransition*>& batch, double gamma, DqnMode mode,
                                 std::size_t m, QNet& online, QNet& target) {
    std::vector<double> y(batch.size());
    // transitions of one request share its next state; evaluate each once
    std::map<const StateMatrix*, double> next_value;
    std::vector<const StateMatrix*> order;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = batch[i]->reward;
        if (batch[i]->terminal) continue;
        const StateMatrix* sn = batch[i]->s_next.get();
        if (sn == nullptr) throw UsageError("non-terminal transition without a next state");
        if (next_value.emplace(sn, 0.0).second) order.push_back(sn);
    }
    if (order.empty()) return y;

    if (mode == DqnMode::Parallel) {
        Eigen::Index rows = 0;
        for (const auto* sn : order) rows += sn->rows();
        Mat f(rows, order.front()->cols());
        std::vector<std::size_t> pos;
        Eigen::Index r = 0;
        for (const auto* sn : order) {
            f.middleRows(r, sn->rows()) = *sn;
            for (Eigen::Index i = 0; i < sn->rows(); ++i) pos.push_back(static_cast<std::size_t>(i));
            r += sn->rows();
        }
        const Mat qo = online.q_values(f, pos);
        const Mat qt = target.q_values(f, pos);
        r = 0;
        for (const auto* sn : order) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < sn->rows(); ++i, ++r)
                total += qt(r, static_cast<Eigen::Index>(argmax_row(qo, r)));
            next_value[sn] = total / static_cast<double>(sn->rows());
        }
    } else {
        // thread the previous greedy choice position by position across the batch
        std::vector<std::optional<DcIndex>> prev(order.size());
        std::vector<double> total(order.size(), 0.0);
        std::size_t longest = 0;
        for (const auto* sn : order) longest = std::max(longest, static_cast<std::size_t>(sn->rows()));
        for (std::size_t k = 0; k < longest; ++k) {
            std::vector<std::size_t> who;
            for (std::size_t j = 0; j < order.size(); ++j)
                if (static_cast<std::size_t>(order[j]->rows()) > k) who.push_back(j);
            Mat f(static_cast<Eigen::Index>(who.size()), online.input_dim());
            for (std::size_t w = 0; w < who.size(); ++w)
                f.row(static_cast<Eigen::Index>(w)) = vnf_features(*order[who[w]], k, mode, m, prev[who[w]]);
            const std::vector<std::size_t> pos(who.size(), k);
            const Mat qo = online.q_values(f, pos);
            const Mat qt = target.q_values(f, pos);
            for (std::size_t w = 0; w < who.size(); ++w) {
                const DcIndex a = argmax_row(qo, static_cast<Eigen::Index>(w));
                total[who[w]] += qt(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(a));
                prev[who[w]] = a;
            }
        }
        for (std::size_t j = 0; j < order.size(); ++j)
            next_value[order[j]] = total[j] / static_cast<double>(order[j]->rows());
    }
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (!batch[i]->terminal) y[i] += gamma * next_value[batch[i]->s_next.get()];
    return y;
}

DdqnAgent::DdqnAgent(std::size_t num_dcs, DqnMode mode, const DdqnConfig& cfg, std::uint64_t seed)
    : m_(num_dcs), mode_(mode), cfg_(cfg), rng_(make_rng(seed, 201)), buffer_(cfg.buffer_capacity) {
    if (num_dcs < 1) throw UsageError("need at least one DC");
    const std::size_t f = state_dim(num_dcs) + (mode == DqnMode::Sequential ? num_dcs : 0);
    Rng init = make_rng(seed, 202);
    online_ = QNet("q", f, num_dcs, cfg_.hidden, cfg_.blocks, init);
    target_ = online_;
    opt_ = dc::AdamW(online_.params(),
                     {cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps, cfg_.weight_decay});
    cfg_.epsilon.reset();
}

Assignment DdqnAgent::select(const StateMatrix& s, double eps) {
    return mode_ == DqnMode::Parallel ? select_parallel(online_, s, eps, m_, rng_)
                                      : select_sequential(online_, s, eps, m_, rng_);
}

Assignment DdqnAgent::decide(const SfcEnv& env) { return select(env.state(), 0.0); }

void DdqnAgent::remember(const StateMatrix& s, const Assignment& a, double raw_reward, const StateMatrix& s_next,
                         bool terminal) {
    const double r = cfg_.normalize_rewards ? (1.0 - cfg_.gamma) * raw_reward : raw_reward;
    auto next = terminal ? nullptr : std::make_shared<const StateMatrix>(s_next);
    std::optional<DcIndex> prev;
    for (std::size_t i = 0; i < a.targets.size(); ++i) {
        buffer_.push({vnf_features(s, i, mode_, m_, prev), i, a.targets[i], r, next, terminal});
        prev = a.targets[i];
    }
}

std::optional<double> DdqnAgent::train_step() {
    if (buffer_.size() < cfg_.batch) return std::nullopt;
    last_batch_ = buffer_.sample(cfg_.batch, rng_);
    const auto y = ddqn_targets(last_batch_, cfg_.gamma, mode_, m_, online_, target_);
    Mat f(static_cast<Eigen::Index>(last_batch_.size()), online_.input_dim());
    std::vector<std::size_t> pos, act;
    Mat target(static_cast<Eigen::Index>(y.size()), 1);
    for (std::size_t i = 0; i < last_batch_.size(); ++i) {
        f.row(static_cast<Eigen::Index>(i)) = last_batch_[i]->features;
        pos.push_back(last_batch_[i]->position);
        act.push_back(last_batch_[i]->action);
        target(static_cast<Eigen::Index>(i), 0) = y[i];
    }
    auto ps = online_.params();
    dc::zero_grads(ps);
    Tape t;
    Var loss = dc::mse(dc::pick(online_.forward(t, t.constant(f), pos), act), target);
    t.backward(loss);
    opt_.step();
    dc::polyak_update(target_.params(), online_.params(), cfg_.tau);
    return loss.value()(0, 0);
}

void DdqnAgent::save(const std::filesystem::path& path) {
    json moments = json::array();
    for (const auto& mo : opt_.moments()) moments.push_back({{"m", dc::mat_to_json(mo.m)}, {"v", dc::mat_to_json(mo.v)}});
    json extra = {{"epsilon", cfg_.epsilon.value},
                  {"config", cfg_},
                  {"mode", name()},
                  {"target", dc::params_to_json(target_.params())},
                  {"opt", {{"steps", opt_.steps()}, {"moments", moments}}}};
    dc::save_checkpoint(path, online_.params(), extra);
}

void DdqnAgent::load(const std::filesystem::path& path) {
    json extra = dc::load_checkpoint(path, online_.params());
    dc::params_from_json(extra.at("target"), target_.params());
    const auto& mo = extra.at("opt").at("moments");
    if (mo.size() != opt_.moments().size()) throw GenerationError("optimizer state size mismatch");
    for (std::size_t i = 0; i < mo.size(); ++i) {
        opt_.moments()[i].m = dc::mat_from_json(mo[i].at("m"));
        opt_.moments()[i].v = dc::mat_from_json(mo[i].at("v"));
    }
    opt_.set_steps(extra.at("opt").at("steps").get<long>());
    cfg_.epsilon.value = extra.at("epsilon").get<double>();
}

DqnEpisodeStats ddqn_episode(SfcEnv& env, DdqnAgent& agent) {
    DqnEpisodeStats st;
    st.epsilon = agent.epsilon().value;
    StateMatrix s = env.reset();
    while (!env.done()) {
        const Assignment a = agent.select(s, agent.epsilon().value);
        StepResult res = env.step(a);
        ++st.requests;
        if (res.outcome.accepted()) ++st.accepted;
        agent.remember(s, a, res.reward, res.next_state, res.done);
        if (auto l = agent.train_step()) {
            ++st.train_steps;
            st.mean_loss += *l;
        }
        s = std::move(res.next_state);
    }
    if (st.train_steps > 0) st.mean_loss /= static_cast<double>(st.train_steps);
    agent.epsilon().end_episode();
    return st;
}

}  // namespace sfcp
