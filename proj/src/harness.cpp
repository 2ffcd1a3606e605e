#include "sfcp/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace sfcp {

using nlohmann::json;

double average_acceptance(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw UsageError("no records");
    std::size_t ok = 0;
    for (const auto& r : records) ok += r.accepted() ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<double> acceptance_over_time(const std::vector<MetricsRecord>& records, std::size_t window) {
    if (window == 0) throw UsageError("window must be positive");
    std::vector<double> out;
    out.reserve(records.size());
    std::size_t inside = 0;
    for (std::size_t k = 0; k < records.size(); ++k) {
        inside += records[k].accepted() ? 1 : 0;
        if (k >= window) inside -= records[k - window].accepted() ? 1 : 0;
        out.push_back(static_cast<double>(inside) / static_cast<double>(std::min(window, k + 1)));
    }
    return out;
}

ViolationBreakdown violation_breakdown(const std::vector<MetricsRecord>& records) {
    ViolationBreakdown v;
    if (records.empty()) return v;
    for (const auto& r : records) {
        if (r.verdict == Verdict::RejectedCpu) v.cpu += 1;
        if (r.verdict == Verdict::RejectedSla) v.sla += 1;
        if (r.verdict == Verdict::RejectedBandwidth) v.bandwidth += 1;
    }
    const auto n = static_cast<double>(records.size());
    v.cpu /= n;
    v.sla /= n;
    v.bandwidth /= n;
    return v;
}

double utilization(const MetricsRecord& r) {
    if (r.used_ticks.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t u = 0; u < r.used_ticks.size(); ++u)
        if (r.total_ticks[u] > 0) sum += static_cast<double>(r.used_ticks[u]) / static_cast<double>(r.total_ticks[u]);
    return sum / static_cast<double>(r.used_ticks.size());
}

std::vector<double> avg_utilization(const std::vector<MetricsRecord>& records, bool peak_only, double peak_fraction) {
    double peak = 0.0;
    for (const auto& r : records) peak = std::max(peak, r.rate);
    std::vector<double> out;
    for (const auto& r : records)
        if (!peak_only || r.rate >= peak_fraction * peak) out.push_back(utilization(r));
    return out;
}

double load_perplexity(const std::vector<double>& used) {
    double total = 0.0;
    for (double u : used) {
        if (u < 0.0) throw UsageError("negative usage");
        total += u;
    }
    if (!(total > 0.0)) throw UsageError("perplexity needs some usage");
    double h = 0.0;
    for (double u : used)
        if (u > 0.0) {
            const double p = u / total;
            h -= p * std::log(p);
        }
    return std::exp(h);
}

double load_perplexity(const MetricsRecord& r) {
    std::vector<double> used;
    for (auto t : r.used_ticks) used.push_back(static_cast<double>(t));
    return load_perplexity(used);
}

double mean(const std::vector<double>& xs) {
    if (xs.empty()) throw UsageError("mean of nothing");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double median(std::vector<double> xs) {
    if (xs.empty()) throw UsageError("median of nothing");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::size_t median_index(const std::vector<double>& xs) {
    const double med = median(xs);
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (std::abs(xs[i] - med) < std::abs(xs[best] - med)) best = i;
    return best;
}

std::vector<MetricsRecord> run_policy(SfcEnv& env, Policy& policy, double base_rate) {
    using Clock = std::chrono::steady_clock;
    env.reset();
    const std::size_t n = env.workload().size();
    std::vector<MetricsRecord> out;
    out.reserve(n);
    while (!env.done()) {
        const SfcRequest& req = env.current();
        const auto t0 = Clock::now();
        Assignment a = policy.decide(env);
        const auto t1 = Clock::now();
        MetricsRecord rec;
        rec.t = env.cursor();
        rec.chain_length = req.size();
        rec.rate = modulated_rate(rec.t, n, base_rate);
        rec.inference_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        const SfcRequest copy = req;
        StepResult res = env.step(a);
        policy.observe(copy, a, res.outcome);
        rec.verdict = res.outcome.verdict;
        rec.e2e_latency = res.outcome.e2e_latency;
        for (const auto& d : env.network().dcs()) {
            rec.used_ticks.push_back(d.used_cpu().ticks());
            rec.total_ticks.push_back(d.total_cpu().ticks());
        }
        out.push_back(std::move(rec));
    }
    return out;
}

double bench_inference(SfcEnv& env, Policy& policy, std::size_t warmup) {
    using Clock = std::chrono::steady_clock;
    env.reset();
    double total = 0.0;
    std::size_t counted = 0;
    while (!env.done()) {
        const std::size_t k = env.cursor();
        const SfcRequest copy = env.current();
        const auto t0 = Clock::now();
        Assignment a = policy.decide(env);
        const auto t1 = Clock::now();
        if (k >= warmup) {
            total += static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            ++counted;
        }
        StepResult res = env.step(a);
        policy.observe(copy, a, res.outcome);
    }
    if (counted == 0) throw UsageError("workload shorter than the warm-up");
    return total / static_cast<double>(counted);
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw UsageError("unformattable number");
    return std::string(buf, p);
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

Verdict verdict_from(const std::string& s) {
    for (Verdict v : {Verdict::Accepted, Verdict::RejectedCpu, Verdict::RejectedBandwidth, Verdict::RejectedSla})
        if (verdict_name(v) == s) return v;
    throw GenerationError("unknown verdict " + s);
}

}  // namespace

void write_trace_csv(std::ostream& os, const std::vector<MetricsRecord>& records) {
    const std::size_t m = records.empty() ? 0 : records.front().used_ticks.size();
    os << "# sfcp-trace v" << kTraceSchemaVersion << "\n";
    os << "t,verdict,e2e_latency,chain_length,rate,utilization";
    for (std::size_t u = 0; u < m; ++u) os << ",used_" << u;
    for (std::size_t u = 0; u < m; ++u) os << ",total_" << u;
    os << "\n";
    for (const auto& r : records) {
        os << r.t << ',' << verdict_name(r.verdict) << ',' << (r.e2e_latency ? fmt(*r.e2e_latency) : "") << ','
           << r.chain_length << ',' << fmt(r.rate) << ',' << fmt(utilization(r));
        for (auto v : r.used_ticks) os << ',' << v;
        for (auto v : r.total_ticks) os << ',' << v;
        os << "\n";
    }
}

std::vector<MetricsRecord> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "# sfcp-trace v" + std::to_string(kTraceSchemaVersion))
        throw GenerationError("not a trace file of this schema");
    if (!std::getline(is, line)) throw GenerationError("missing trace header");
    const auto header = split(line, ',');
    if (header.size() < 6 || (header.size() - 6) % 2 != 0) throw GenerationError("bad trace header");
    const std::size_t m = (header.size() - 6) / 2;
    std::vector<MetricsRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto c = split(line, ',');
        if (c.size() != header.size()) throw GenerationError("ragged trace row");
        MetricsRecord r;
        r.t = std::stoul(c[0]);
        r.verdict = verdict_from(c[1]);
        if (!c[2].empty()) r.e2e_latency = std::stod(c[2]);
        r.chain_length = std::stoul(c[3]);
        r.rate = std::stod(c[4]);
        for (std::size_t u = 0; u < m; ++u) r.used_ticks.push_back(std::stoll(c[6 + u]));
        for (std::size_t u = 0; u < m; ++u) r.total_ticks.push_back(std::stoll(c[6 + m + u]));
        out.push_back(std::move(r));
    }
    return out;
}

void write_timing_csv(std::ostream& os, const std::vector<MetricsRecord>& records) {
    os << "t,inference_ns\n";
    for (const auto& r : records) os << r.t << ',' << r.inference_ns << "\n";
}

const std::vector<Algo>& all_algos() {
    static const std::vector<Algo> v{Algo::Gp, Algo::Ils, Algo::Rails, Algo::ParaDdqn, Algo::SeqDdqn, Algo::Sdac};
    return v;
}

std::string algo_name(Algo a) {
    switch (a) {
        case Algo::Gp: return "gp";
        case Algo::Ils: return "ils";
        case Algo::Rails: return "rails";
        case Algo::ParaDdqn: return "paraddqn";
        case Algo::SeqDdqn: return "seqddqn";
        case Algo::Sdac: return "sdac";
    }
    return "unknown";
}

Algo parse_algo(const std::string& name) {
    for (Algo a : all_algos())
        if (algo_name(a) == name) return a;
    throw UsageError("unknown algorithm: " + name);
}

bool is_learning(Algo a) { return a == Algo::ParaDdqn || a == Algo::SeqDdqn || a == Algo::Sdac; }

void RunConfig::apply_smoke() {
    requests = 1000;
    eval_requests = 1000;
    episodes = 3;
}

namespace {

json search_to_json(const LocalSearchOptions& o) { return {{"max_iter", o.max_iter}, {"perturb_prob", o.perturb_prob}}; }

LocalSearchOptions search_from_json(const json& j) {
    LocalSearchOptions d;
    return {j.value("max_iter", d.max_iter), j.value("perturb_prob", d.perturb_prob)};
}

json rails_to_json(const RailsConfig& c) {
    return {{"rho", c.rho},
            {"update_every", c.update_every},
            {"hidden", c.risk.hidden},
            {"memory", c.risk.memory},
            {"lr", c.risk.lr},
            {"weight_decay", c.risk.weight_decay},
            {"batch", c.risk.batch},
            {"search", search_to_json(c.search)}};
}

RailsConfig rails_from_json(const json& j) {
    RailsConfig c;
    c.rho = j.value("rho", c.rho);
    c.update_every = j.value("update_every", c.update_every);
    c.risk.hidden = j.value("hidden", c.risk.hidden);
    c.risk.memory = j.value("memory", c.risk.memory);
    c.risk.lr = j.value("lr", c.risk.lr);
    c.risk.weight_decay = j.value("weight_decay", c.risk.weight_decay);
    c.risk.batch = j.value("batch", c.risk.batch);
    if (j.contains("search")) c.search = search_from_json(j["search"]);
    return c;
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
    json algos = json::array();
    for (Algo a : c.algos) algos.push_back(algo_name(a));
    j = {{"substrate", c.substrate},
         {"traffic", c.traffic},
         {"requests", c.requests},
         {"eval_requests", c.eval_requests},
         {"episodes", c.episodes},
         {"algos", algos},
         {"sdac", c.sdac},
         {"ddqn", c.ddqn},
         {"rails", rails_to_json(c.rails)},
         {"ils", search_to_json(c.ils)},
         {"seed", c.seed},
         {"topologies", c.topologies},
         {"test_seeds", c.test_seeds},
         {"window", c.window},
         {"out", c.out}};
}

void from_json(const json& j, RunConfig& c) {
    const RunConfig d;
    c.substrate = j.value("substrate", d.substrate);
    c.traffic = j.value("traffic", d.traffic);
    c.requests = j.value("requests", d.requests);
    c.eval_requests = j.value("eval_requests", c.requests);
    c.episodes = j.value("episodes", d.episodes);
    c.algos.clear();
    if (j.contains("algos")) {
        for (const auto& a : j["algos"]) c.algos.push_back(parse_algo(a.get<std::string>()));
    } else {
        c.algos = d.algos;
    }
    c.sdac = j.value("sdac", d.sdac);
    c.ddqn = j.value("ddqn", d.ddqn);
    c.rails = j.contains("rails") ? rails_from_json(j["rails"]) : d.rails;
    c.ils = j.contains("ils") ? search_from_json(j["ils"]) : d.ils;
    c.seed = j.value("seed", d.seed);
    c.topologies = j.value("topologies", d.topologies);
    c.test_seeds = j.value("test_seeds", d.test_seeds);
    c.window = j.value("window", d.window);
    c.out = j.value("out", d.out);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    return json::parse(in).get<RunConfig>();
}

std::uint64_t topology_seed(std::uint64_t base, std::size_t k) { return derive_seed(base, 1000 + k); }
std::uint64_t train_workload_seed(std::uint64_t base, std::size_t k, std::size_t episode) {
    return derive_seed(derive_seed(base, 2000 + k), episode);
}
std::uint64_t eval_workload_seed(std::uint64_t base, std::size_t k) { return derive_seed(base, 3000 + k); }
std::uint64_t test_workload_seed(std::uint64_t base, std::size_t j) { return derive_seed(base, 4000 + j); }
std::uint64_t agent_seed(std::uint64_t base, std::size_t k) { return derive_seed(base, 5000 + k); }
std::uint64_t solver_seed(std::uint64_t base, std::size_t j) { return derive_seed(base, 6000 + j); }

void Agent::save(const std::filesystem::path& path) {
    if (sdac) return sdac->save(path);
    if (ddqn) return ddqn->save(path);
    if (rails) return rails->save(path);
    throw UsageError(name() + " has no learned state");
}

void Agent::load(const std::filesystem::path& path) {
    if (sdac) return sdac->load(path);
    if (ddqn) return ddqn->load(path);
    if (rails) return rails->load(path);
    throw UsageError(name() + " has no learned state");
}

Agent make_agent(Algo algo, std::size_t num_dcs, const RunConfig& cfg, std::uint64_t seed) {
    Agent a;
    a.algo = algo;
    switch (algo) {
        case Algo::Gp: a.policy = std::make_unique<GreedyPolicy>(); break;
        case Algo::Ils: a.policy = std::make_unique<IlsPolicy>(seed, cfg.ils); break;
        case Algo::Rails: {
            auto p = std::make_unique<RailsPolicy>(num_dcs, cfg.rails, seed);
            a.rails = p.get();
            a.policy = std::move(p);
            break;
        }
        case Algo::ParaDdqn:
        case Algo::SeqDdqn: {
            auto p = std::make_unique<DdqnAgent>(
                num_dcs, algo == Algo::ParaDdqn ? DqnMode::Parallel : DqnMode::Sequential, cfg.ddqn, seed);
            a.ddqn = p.get();
            a.policy = std::move(p);
            break;
        }
        case Algo::Sdac: {
            auto p = std::make_unique<SdacAgent>(num_dcs, cfg.sdac, seed);
            a.sdac = p.get();
            a.policy = std::move(p);
            break;
        }
    }
    return a;
}

double evaluate_reward(Policy& policy, const SubstrateNetwork& net, const Workload& w) {
    SfcEnv env(net, w);
    env.reset();
    double total = 0.0;
    while (!env.done()) {
        const SfcRequest copy = env.current();
        Assignment a = policy.decide(env);
        StepResult res = env.step(a);
        policy.observe(copy, a, res.outcome);
        total += res.reward;
    }
    return w.empty() ? 0.0 : total / static_cast<double>(w.size());
}

std::vector<LearningRow> train_agent(Agent& agent, const SubstrateNetwork& net, const RunConfig& cfg,
                                     std::size_t topology, const Workload& eval,
                                     const std::function<void(const LearningRow&)>& on_episode) {
    if (!agent.learns()) throw UsageError(agent.name() + " is not trained");
    std::vector<LearningRow> rows;
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
        Workload w = generate_workload(cfg.requests, net.num_dcs(), train_workload_seed(cfg.seed, topology, e),
                                       cfg.traffic);
        SfcEnv env(net, std::move(w));
        LearningRow row;
        row.episode = e;
        if (agent.sdac) {
            auto st = sdac_episode(env, *agent.sdac);
            row.epsilon = st.epsilon;
            row.train_steps = st.train_steps;
            row.loss = st.mean_critic_loss;
            row.actor_loss = st.mean_actor_loss;
            row.train_acceptance = static_cast<double>(st.accepted) / static_cast<double>(std::max<std::size_t>(1, st.requests));
        } else {
            auto st = ddqn_episode(env, *agent.ddqn);
            row.epsilon = st.epsilon;
            row.train_steps = st.train_steps;
            row.loss = st.mean_loss;
            row.train_acceptance = static_cast<double>(st.accepted) / static_cast<double>(std::max<std::size_t>(1, st.requests));
        }
        row.eval_reward = evaluate_reward(*agent.policy, net, eval);
        rows.push_back(row);
        if (on_episode) on_episode(row);
    }
    return rows;
}

void write_learning_csv(std::ostream& os, const std::vector<LearningRow>& rows) {
    os << "episode,epsilon,train_steps,loss,actor_loss,train_acceptance,eval_reward\n";
    for (const auto& r : rows)
        os << r.episode << ',' << fmt(r.epsilon) << ',' << r.train_steps << ',' << fmt(r.loss) << ','
           << fmt(r.actor_loss) << ',' << fmt(r.train_acceptance) << ',' << fmt(r.eval_reward) << "\n";
}

RunSummary summarize(const std::vector<MetricsRecord>& records) {
    RunSummary s;
    s.acceptance = average_acceptance(records);
    const auto v = violation_breakdown(records);
    s.cpu_violations = v.cpu;
    s.sla_violations = v.sla;
    const auto peak = avg_utilization(records, true);
    s.peak_utilization = peak.empty() ? 0.0 : mean(peak);
    std::vector<double> perp;
    for (const auto& r : records) {
        double used = 0.0;
        for (auto t : r.used_ticks) used += static_cast<double>(t);
        if (used > 0.0) perp.push_back(load_perplexity(r));
    }
    s.mean_perplexity = perp.empty() ? 0.0 : mean(perp);
    return s;
}

json summary_to_json(const RunSummary& s) {
    return {{"acceptance", s.acceptance},
            {"cpu_violations", s.cpu_violations},
            {"sla_violations", s.sla_violations},
            {"peak_utilization", s.peak_utilization},
            {"mean_perplexity", s.mean_perplexity}};
}

namespace {

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot write " + path.string());
    body(os);
}

json orchestrate_algo(Algo algo, const RunConfig& cfg, const std::filesystem::path& root,
                      const std::function<void(const std::string&)>& log) {
    const std::string name = algo_name(algo);
    const auto dir = root / name;
    json out = {{"algo", name}};

    // topology sweep
    std::vector<double> rewards;
    std::vector<Agent> agents;
    std::vector<SubstrateNetwork> nets;
    for (std::size_t k = 0; k < cfg.topologies; ++k) {
        nets.push_back(generate_substrate(cfg.substrate, topology_seed(cfg.seed, k)));
        Workload eval = generate_workload(cfg.eval_requests, cfg.substrate.num_dcs, eval_workload_seed(cfg.seed, k),
                                          cfg.traffic);
        Agent agent = make_agent(algo, cfg.substrate.num_dcs, cfg, agent_seed(cfg.seed, k));
        double reward = 0.0;
        if (agent.learns()) {
            auto rows = train_agent(agent, nets.back(), cfg, k, eval, [&](const LearningRow& r) {
                if (log)
                    log(name + " topology " + std::to_string(k) + " episode " + std::to_string(r.episode) +
                        " eval " + fmt(r.eval_reward));
            });
            write_file(dir / ("learning_topology" + std::to_string(k) + ".csv"),
                       [&](std::ostream& os) { write_learning_csv(os, rows); });
            reward = rows.empty() ? evaluate_reward(*agent.policy, nets.back(), eval) : rows.back().eval_reward;
        } else {
            reward = evaluate_reward(*agent.policy, nets.back(), eval);
        }
        rewards.push_back(reward);
        agents.push_back(std::move(agent));
    }
    const std::size_t chosen = median_index(rewards);
    out["topology_rewards"] = rewards;
    out["median_reward"] = median(rewards);
    out["selected_topology"] = chosen;
    if (log) log(name + " selected topology " + std::to_string(chosen));

    // test seeds on the selected topology
    json runs = json::array();
    std::vector<RunSummary> summaries;
    for (std::size_t j = 0; j < cfg.test_seeds; ++j) {
        Workload w = generate_workload(cfg.requests, cfg.substrate.num_dcs, test_workload_seed(cfg.seed, j), cfg.traffic);
        SfcEnv env(nets[chosen], std::move(w));
        // trained agents are reused greedily; the others start fresh per run
        Agent fresh;
        Policy* policy = agents[chosen].policy.get();
        if (!agents[chosen].learns()) {
            fresh = make_agent(algo, cfg.substrate.num_dcs, cfg, solver_seed(cfg.seed, j));
            policy = fresh.policy.get();
        }
        auto records = run_policy(env, *policy, cfg.traffic.base_rate);
        const std::string stem = "test_seed" + std::to_string(j);
        write_file(dir / (stem + "_trace.csv"), [&](std::ostream& os) { write_trace_csv(os, records); });
        write_file(dir / (stem + "_timing.csv"), [&](std::ostream& os) { write_timing_csv(os, records); });
        const auto over_time = acceptance_over_time(records, cfg.window);
        write_file(dir / (stem + "_acceptance_over_time.csv"), [&](std::ostream& os) {
            os << "t,acceptance,rate\n";
            for (std::size_t k = 0; k < records.size(); ++k)
                os << k << ',' << fmt(over_time[k]) << ',' << fmt(records[k].rate) << "\n";
        });
        RunSummary s = summarize(records);
        summaries.push_back(s);
        json run = summary_to_json(s);
        run["seed_index"] = j;
        runs.push_back(run);
        if (log) log(name + " test seed " + std::to_string(j) + " acceptance " + fmt(s.acceptance));
    }
    out["runs"] = runs;
    RunSummary avg;
    const auto n = static_cast<double>(std::max<std::size_t>(1, summaries.size()));
    for (const auto& s : summaries) {
        avg.acceptance += s.acceptance / n;
        avg.cpu_violations += s.cpu_violations / n;
        avg.sla_violations += s.sla_violations / n;
        avg.peak_utilization += s.peak_utilization / n;
        avg.mean_perplexity += s.mean_perplexity / n;
    }
    out["mean"] = summary_to_json(avg);
    return out;
}

}  // namespace

json orchestrate(const RunConfig& cfg, const std::function<void(const std::string&)>& log) {
    if (cfg.topologies == 0 || cfg.test_seeds == 0) throw UsageError("need at least one topology and one test seed");
    const std::filesystem::path root(cfg.out);
    json report = {{"format", "sfcp-report"}, {"version", 1}, {"config", cfg}};
    json algos = json::array();
    for (Algo a : cfg.algos) {
        try {
            algos.push_back(orchestrate_algo(a, cfg, root, log));
        } catch (const std::exception& e) {
            algos.push_back({{"algo", algo_name(a)}, {"failed", true}, {"error", e.what()}});
            if (log) log(algo_name(a) + " failed: " + e.what());
        }
    }
    report["algorithms"] = algos;
    write_file(root / "report.json", [&](std::ostream& os) { os << report.dump(2) << "\n"; });
    return report;
}

}  // namespace sfcp
