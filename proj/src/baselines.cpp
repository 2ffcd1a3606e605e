#include "sfcp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfcp/diffcomp/checkpoint.hpp"

namespace sfcp {

using dc::Mat;
using dc::Tape;
using dc::Var;

std::vector<Cpu> free_capacity(const SubstrateNetwork& net) {
    std::vector<Cpu> out;
    for (const auto& d : net.dcs()) out.push_back(d.free_cpu());
    return out;
}

Assignment gp_assign(const SfcRequest& request, const std::vector<double>& free) {
    if (free.empty()) throw UsageError("no DCs to choose from");
    const auto best = static_cast<DcIndex>(std::max_element(free.begin(), free.end()) - free.begin());
    return {std::vector<DcIndex>(request.size(), best)};
}

Assignment gp_assign(const SfcRequest& request, const SubstrateNetwork& net) {
    std::vector<double> free;
    for (Cpu c : free_capacity(net)) free.push_back(static_cast<double>(c.ticks()));
    return gp_assign(request, free);
}

std::size_t default_max_iter(std::size_t chain_length, std::size_t num_dcs) {
    return std::max<std::size_t>(1, 10 * chain_length * num_dcs);
}

namespace {

struct Loads {
    std::vector<Cpu> demand;
    std::vector<std::size_t> count;
};

Loads loads_of(const Assignment& a, const std::vector<Cpu>& demands, std::size_t m) {
    Loads l{std::vector<Cpu>(m), std::vector<std::size_t>(m, 0)};
    for (std::size_t i = 0; i < a.targets.size(); ++i) {
        l.demand[a.targets[i]] += demands[i];
        ++l.count[a.targets[i]];
    }
    return l;
}

bool all_feasible(const Assignment& a, const std::vector<Cpu>& demands, std::size_t m, const FeasibilityCheck& ok) {
    const Loads l = loads_of(a, demands, m);
    for (DcIndex u = 0; u < m; ++u)
        if (l.count[u] > 0 && !ok(u, l.demand[u], l.count[u])) return false;
    return true;
}

}  // namespace

LocalSearchResult local_search(const SfcRequest& request, const LatencyMatrix& latency, std::size_t num_dcs,
                               const FeasibilityCheck& feasible, const LocalSearchOptions& opts, Rng& rng) {
    if (num_dcs == 0) throw UsageError("no DCs to choose from");
    if (request.size() == 0) throw UsageError("empty chain");
    const std::size_t n = request.size(), m = num_dcs;
    const std::size_t max_iter = opts.max_iter > 0 ? opts.max_iter : default_max_iter(n, m);
    std::vector<Cpu> demands;
    for (const auto& v : request.vnfs) demands.push_back(Cpu::from_fraction(v.cpu_demand));

    std::uniform_int_distribution<std::size_t> pick_dc(0, m - 1), pick_vnf(0, n - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    LocalSearchResult res;
    res.best.targets.resize(n);
    for (auto& t : res.best.targets) t = pick_dc(rng);
    res.latency = e2e_latency(res.best, request, latency);
    res.feasible = all_feasible(res.best, demands, m, feasible);
    res.accepted.push_back(res.latency);
    res.accepted_feasible.push_back(res.feasible);

    Assignment cand;
    while (!(res.feasible && res.latency <= request.l_sla) && res.iterations < max_iter) {
        ++res.iterations;
        cand = res.best;
        for (auto& t : cand.targets)
            if (coin(rng) < opts.perturb_prob) t = pick_dc(rng);

        const std::size_t v = pick_vnf(rng);
        Loads l = loads_of(cand, demands, m);
        l.demand[cand.targets[v]] -= demands[v];
        --l.count[cand.targets[v]];
        std::optional<DcIndex> chosen;
        TimeUnits chosen_lat = 0.0;
        for (DcIndex u = 0; u < m; ++u) {
            if (!feasible(u, l.demand[u] + demands[v], l.count[u] + 1)) continue;
            cand.targets[v] = u;
            const TimeUnits lat = e2e_latency(cand, request, latency);
            if (!chosen || lat < chosen_lat) {
                chosen = u;
                chosen_lat = lat;
            }
        }
        // with no checked DC the perturbed candidate goes to acceptance unchanged
        if (chosen) cand.targets[v] = *chosen;
        const TimeUnits cand_lat = chosen ? chosen_lat : e2e_latency(cand, request, latency);
        const bool cand_ok = all_feasible(cand, demands, m, feasible);

        // feasibility first, then strictly lower latency
        if ((cand_ok && !res.feasible) || (cand_ok == res.feasible && cand_lat < res.latency)) {
            res.best = cand;
            res.latency = cand_lat;
            res.feasible = cand_ok;
            res.accepted.push_back(res.latency);
            res.accepted_feasible.push_back(res.feasible);
        }
    }
    return res;
}

LocalSearchResult ils_solve(const SfcRequest& request, const SubstrateNetwork& net, const LocalSearchOptions& opts,
                            Rng& rng) {
    const auto free = free_capacity(net);
    return local_search(
        request, net.latency(), net.num_dcs(), [&](DcIndex u, Cpu demand, std::size_t) { return demand <= free[u]; },
        opts, rng);
}

RiskFeatures risk_features(const DataCenter& dc, Cpu demand, std::size_t count) {
    const auto total = static_cast<double>(dc.total_cpu().ticks());
    if (total <= 0.0) return {0.0, 0.0, static_cast<double>(count) / 10.0};
    return {static_cast<double>(dc.free_cpu().ticks()) / total, static_cast<double>(demand.ticks()) / total,
            static_cast<double>(count) / 10.0};
}

RiskModel::RiskModel(const std::string& name, const RiskConfig& cfg, Rng& rng)
    : fc1(name + ".fc1", 3, cfg.hidden, rng),
      fc2(name + ".fc2", cfg.hidden, cfg.hidden, rng),
      out(name + ".out", cfg.hidden, 1, rng),
      ln(name + ".ln", cfg.hidden),
      cfg_(cfg),
      memory_(cfg.memory),
      opt_(params(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}) {}

RiskModel::RiskModel(const RiskModel& other)
    : fc1(other.fc1),
      fc2(other.fc2),
      out(other.out),
      ln(other.ln),
      cfg_(other.cfg_),
      memory_(other.memory_),
      updates_(other.updates_) {
    // the optimizer must point at this copy's parameters
    opt_ = dc::AdamW(params(), other.opt_.config());
    opt_.moments() = other.opt_.moments();
    opt_.set_steps(other.opt_.steps());
}

RiskModel& RiskModel::operator=(const RiskModel& other) {
    if (this != &other) {
        RiskModel tmp(other);
        fc1 = tmp.fc1;
        fc2 = tmp.fc2;
        out = tmp.out;
        ln = tmp.ln;
        cfg_ = tmp.cfg_;
        memory_ = tmp.memory_;
        updates_ = tmp.updates_;
        opt_ = dc::AdamW(params(), tmp.opt_.config());
        opt_.moments() = tmp.opt_.moments();
        opt_.set_steps(tmp.opt_.steps());
    }
    return *this;
}

double RiskModel::predict(const RiskFeatures& x) const {
    // forward-only path without a tape; must agree with logits()
    Mat in(1, 3);
    in << x[0], x[1], x[2];
    Mat h = dc::gelu(in * fc1.w.value + fc1.b.value);
    Mat z = dc::layer_norm_rows(h, ln.gain.value, ln.bias.value);
    h += dc::gelu(z * fc2.w.value + fc2.b.value);
    const double logit = (h * out.w.value)(0, 0) + out.b.value(0, 0);
    return 1.0 / (1.0 + std::exp(-logit));
}

Var RiskModel::logits(Tape& t, Var x) {
    Var h = dc::gelu(fc1(t, x));
    h = dc::add(h, dc::gelu(fc2(t, ln(t, h))));
    return out(t, h);
}

dc::ParamList RiskModel::params() {
    dc::ParamList ps;
    fc1.collect(ps);
    ln.collect(ps);
    fc2.collect(ps);
    out.collect(ps);
    return ps;
}

double RiskModel::memory_loss() {
    if (memory_.empty()) throw UsageError("empty risk memory");
    Mat x(static_cast<Eigen::Index>(memory_.size()), 3), y(static_cast<Eigen::Index>(memory_.size()), 1);
    for (std::size_t i = 0; i < memory_.size(); ++i) {
        const auto& s = memory_.at(i);
        const auto r = static_cast<Eigen::Index>(i);
        x.row(r) << s.x[0], s.x[1], s.x[2];
        y(r, 0) = s.label;
    }
    Tape t(false);
    return dc::bce_with_logits(logits(t, t.constant(x)), y).value()(0, 0);
}

std::optional<double> RiskModel::update(Rng& rng) {
    if (memory_.empty()) return std::nullopt;
    std::vector<std::size_t> order(memory_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto ps = params();
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch);
        Mat x(static_cast<Eigen::Index>(end - start), 3), y(static_cast<Eigen::Index>(end - start), 1);
        for (std::size_t k = start; k < end; ++k) {
            const auto& s = memory_.at(order[k]);
            const auto r = static_cast<Eigen::Index>(k - start);
            x.row(r) << s.x[0], s.x[1], s.x[2];
            y(r, 0) = s.label;
        }
        dc::zero_grads(ps);
        Tape t;
        Var loss = dc::bce_with_logits(logits(t, t.constant(x)), y);
        t.backward(loss);
        opt_.step();
        total += loss.value()(0, 0);
        ++batches;
    }
    ++updates_;
    return total / static_cast<double>(batches);
}

LocalSearchResult rails_solve(const SfcRequest& request, const SubstrateNetwork& net,
                              const std::vector<RiskModel>& models, double rho, const LocalSearchOptions& opts,
                              Rng& rng) {
    if (models.size() != net.num_dcs()) throw UsageError("one risk model per DC required");
    return local_search(
        request, net.latency(), net.num_dcs(),
        [&](DcIndex u, Cpu demand, std::size_t count) {
            return models[u].predict(risk_features(net.dc(u), demand, count)) >= rho;
        },
        opts, rng);
}

IlsPolicy::IlsPolicy(std::uint64_t seed, LocalSearchOptions opts) : opts_(opts), rng_(make_rng(seed, 301)) {}

Assignment IlsPolicy::decide(const SfcEnv& env) { return ils_solve(env.current(), env.network(), opts_, rng_).best; }

RailsPolicy::RailsPolicy(std::size_t num_dcs, const RailsConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(make_rng(seed, 401)), pending_(num_dcs) {
    Rng init = make_rng(seed, 402);
    for (std::size_t u = 0; u < num_dcs; ++u) models_.emplace_back("risk" + std::to_string(u), cfg_.risk, init);
}

Assignment RailsPolicy::decide(const SfcEnv& env) {
    const auto& req = env.current();
    const auto& net = env.network();
    Assignment a = rails_solve(req, net, models_, cfg_.rho, cfg_.search, rng_).best;
    std::vector<Cpu> demand(net.num_dcs());
    std::vector<std::size_t> count(net.num_dcs(), 0);
    for (std::size_t i = 0; i < a.targets.size(); ++i) {
        demand[a.targets[i]] += Cpu::from_fraction(req.vnfs[i].cpu_demand);
        ++count[a.targets[i]];
    }
    for (DcIndex u = 0; u < net.num_dcs(); ++u)
        pending_[u] = count[u] > 0 ? std::optional(risk_features(net.dc(u), demand[u], count[u])) : std::nullopt;
    return a;
}

void RailsPolicy::observe(const SfcRequest&, const Assignment&, const AdmissionOutcome& outcome) {
    if (outcome.verdict == Verdict::Accepted) {
        for (DcIndex u = 0; u < pending_.size(); ++u)
            if (pending_[u]) models_[u].remember({*pending_[u], 1.0});
    } else if (outcome.verdict == Verdict::RejectedCpu && outcome.failed_dc) {
        const DcIndex u = *outcome.failed_dc;
        if (u < pending_.size() && pending_[u]) models_[u].remember({*pending_[u], 0.0});
    }
    for (auto& p : pending_) p.reset();
    ++processed_;
    if (processed_ % cfg_.update_every == 0) {
        for (auto& model : models_) model.update(rng_);
        ++refreshes_;
    }
}

void RailsPolicy::save(const std::filesystem::path& path) {
    dc::ParamList ps;
    for (auto& model : models_) {
        auto p = model.params();
        ps.insert(ps.end(), p.begin(), p.end());
    }
    dc::save_checkpoint(path, ps, {{"processed", processed_}, {"refreshes", refreshes_}});
}

void RailsPolicy::load(const std::filesystem::path& path) {
    dc::ParamList ps;
    for (auto& model : models_) {
        auto p = model.params();
        ps.insert(ps.end(), p.begin(), p.end());
    }
    auto extra = dc::load_checkpoint(path, ps);
    processed_ = extra.value("processed", std::size_t{0});
    refreshes_ = extra.value("refreshes", std::size_t{0});
}

}  // namespace sfcp
