#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "sfcp/harness.hpp"

using namespace sfcp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string algo = "gp";
    std::string out;
    bool smoke = false;
    std::size_t topology = 0;
    std::size_t test_seed = 0;
    std::string checkpoint;
};

void add_common(CLI::App* app, Common& c, bool with_algo) {
    app->add_option("--config", c.config, "JSON run config");
    app->add_option("--seed", c.seed, "base seed (overrides the config)");
    if (with_algo)
        app->add_option("--algo", c.algo, "gp|ils|rails|paraddqn|seqddqn|sdac")
            ->check(CLI::IsMember({"gp", "ils", "rails", "paraddqn", "seqddqn", "sdac"}));
    app->add_option("--out", c.out, "output directory");
    app->add_flag("--smoke", c.smoke, "1,000 requests and 3 episodes");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.smoke) cfg.apply_smoke();
    if (!c.out.empty()) cfg.out = c.out;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot write " + path.string());
    os << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SFC partitioning simulator"};
    app.require_subcommand(1);
    Common c;

    auto* topo = app.add_subcommand("generate-topology", "write a substrate JSON document");
    add_common(topo, c, false);
    topo->add_option("--topology", c.topology, "topology index under the base seed");

    auto* wl = app.add_subcommand("generate-workload", "write a JSON-lines workload");
    add_common(wl, c, false);
    wl->add_option("--test-seed", c.test_seed, "test workload index under the base seed");

    auto* train = app.add_subcommand("train", "train one agent on one topology");
    add_common(train, c, true);
    train->add_option("--topology", c.topology, "topology index under the base seed");

    auto* eval = app.add_subcommand("evaluate", "run one policy over a test workload");
    add_common(eval, c, true);
    eval->add_option("--topology", c.topology, "topology index under the base seed");
    eval->add_option("--test-seed", c.test_seed, "test workload index under the base seed");
    eval->add_option("--checkpoint", c.checkpoint, "learned state to load first");

    auto* bench = app.add_subcommand("bench-inference", "mean decision time per request");
    add_common(bench, c, true);
    bench->add_option("--checkpoint", c.checkpoint, "learned state to load first");

    auto* report = app.add_subcommand("report", "full pipeline: topology sweep, median selection, test seeds");
    add_common(report, c, false);
    std::vector<std::string> algos;
    report->add_option("--algo", algos, "restrict to these algorithms");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve(c);
        const fs::path out(cfg.out);

        if (*topo) {
            auto net = generate_substrate(cfg.substrate, topology_seed(cfg.seed, c.topology));
            write_text(out / ("topology" + std::to_string(c.topology) + ".json"), substrate_to_json(net).dump(2) + "\n");
        } else if (*wl) {
            auto w = generate_workload(cfg.requests, cfg.substrate.num_dcs, test_workload_seed(cfg.seed, c.test_seed),
                                       cfg.traffic);
            write_text(out / ("workload" + std::to_string(c.test_seed) + ".jsonl"), workload_to_jsonl(w));
        } else if (*train) {
            const Algo algo = parse_algo(c.algo);
            auto net = generate_substrate(cfg.substrate, topology_seed(cfg.seed, c.topology));
            auto ev = generate_workload(cfg.eval_requests, net.num_dcs(), eval_workload_seed(cfg.seed, c.topology),
                                        cfg.traffic);
            Agent agent = make_agent(algo, net.num_dcs(), cfg, agent_seed(cfg.seed, c.topology));
            auto rows = train_agent(agent, net, cfg, c.topology, ev, [&](const LearningRow& r) {
                log_line(c.algo + " episode " + std::to_string(r.episode) + " eval reward " +
                         std::to_string(r.eval_reward));
            });
            std::ostringstream csv;
            write_learning_csv(csv, rows);
            write_text(out / (c.algo + "_learning.csv"), csv.str());
            fs::create_directories(out);
            agent.save(out / (c.algo + "_checkpoint.json"));
        } else if (*eval) {
            const Algo algo = parse_algo(c.algo);
            auto net = generate_substrate(cfg.substrate, topology_seed(cfg.seed, c.topology));
            auto w = generate_workload(cfg.requests, net.num_dcs(), test_workload_seed(cfg.seed, c.test_seed),
                                       cfg.traffic);
            Agent agent = make_agent(algo, net.num_dcs(), cfg, solver_seed(cfg.seed, c.test_seed));
            if (!c.checkpoint.empty()) agent.load(c.checkpoint);
            SfcEnv env(net, std::move(w));
            auto records = run_policy(env, *agent.policy, cfg.traffic.base_rate);
            std::ostringstream trace, timing;
            write_trace_csv(trace, records);
            write_timing_csv(timing, records);
            const std::string stem = c.algo + "_seed" + std::to_string(c.test_seed);
            write_text(out / (stem + "_trace.csv"), trace.str());
            write_text(out / (stem + "_timing.csv"), timing.str());
            json s = summary_to_json(summarize(records));
            write_text(out / (stem + "_summary.json"), s.dump(2) + "\n");
            std::cout << s.dump() << "\n";
        } else if (*bench) {
            const Algo algo = parse_algo(c.algo);
            auto net = generate_substrate(cfg.substrate, topology_seed(cfg.seed, 0));
            auto w = generate_workload(cfg.requests, net.num_dcs(), test_workload_seed(cfg.seed, 0), cfg.traffic);
            Agent agent = make_agent(algo, net.num_dcs(), cfg, solver_seed(cfg.seed, 0));
            if (!c.checkpoint.empty()) agent.load(c.checkpoint);
            SfcEnv env(net, std::move(w));
            const double ns = bench_inference(env, *agent.policy);
            std::cout << c.algo << " " << ns / 1e6 << " ms/request\n";
        } else if (*report) {
            if (!algos.empty()) {
                cfg.algos.clear();
                for (const auto& a : algos) cfg.algos.push_back(parse_algo(a));
            }
            json r = orchestrate(cfg, log_line);
            for (const auto& a : r["algorithms"]) {
                if (a.contains("failed")) std::cout << a["algo"].get<std::string>() << " FAILED\n";
                else
                    std::cout << a["algo"].get<std::string>() << " acceptance "
                              << a["mean"]["acceptance"].get<double>() << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
