#include "sfcp/env.hpp"

#include <algorithm>
#include <cmath>

namespace sfcp {

std::string_view verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Accepted: return "accepted";
        case Verdict::RejectedCpu: return "rejected_cpu";
        case Verdict::RejectedBandwidth: return "rejected_bw";
        case Verdict::RejectedSla: return "rejected_sla";
    }
    return "unknown";
}

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Endpoint DC sequence src, t_1, ..., t_n, dst.
std::vector<DcIndex> hops(const Assignment& a, const SfcRequest& r) {
    std::vector<DcIndex> seq;
    seq.reserve(a.targets.size() + 2);
    seq.push_back(r.src);
    seq.insert(seq.end(), a.targets.begin(), a.targets.end());
    seq.push_back(r.dst);
    return seq;
}

void check_assignment(const Assignment& a, const SfcRequest& r, std::size_t m) {
    if (a.targets.size() != r.vnfs.size()) throw UsageError("assignment length differs from VNF count");
    for (DcIndex t : a.targets)
        if (t >= m) throw UsageError("assignment targets unknown DC");
    if (r.src >= m || r.dst >= m) throw UsageError("request endpoint outside substrate");
}

}  // namespace

std::vector<double> free_cpu_fractions(const SubstrateNetwork& net) {
    std::vector<double> out;
    out.reserve(net.num_dcs());
    for (const auto& d : net.dcs()) {
        const auto total = static_cast<double>(d.total_cpu().ticks());
        out.push_back(total > 0 ? static_cast<double>(d.free_cpu().ticks()) / total : 0.0);
    }
    return out;
}

StateMatrix encode_state(const SfcRequest& request, const SubstrateNetwork& net, TimeUnits horizon,
                         const EnvOptions& options) {
    const std::size_t m = net.num_dcs();
    const std::size_t n = request.vnfs.size();
    StateMatrix s = StateMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(state_dim(m)));
    const double t_feat = horizon > 0 ? clamp01(request.t_arr / horizon) : 0.0;
    const double life = clamp01(request.t_delta / options.lifetime_cap);
    const double span = options.sla_max - options.sla_min;
    const double sla = span > 0 ? clamp01((request.l_sla - options.sla_min) / span) : 1.0;
    const auto cpu = free_cpu_fractions(net);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = s.row(static_cast<Eigen::Index>(i));
        row(0) = clamp01(request.vnfs[i].cpu_demand);
        row(1) = i + 1 < request.vlink_bw.size() ? clamp01(request.vlink_bw[i + 1]) : 0.0;
        row(2) = t_feat;
        row(3) = life;
        row(4) = sla;
        row(static_cast<Eigen::Index>(5 + request.src)) = 1.0;
        row(static_cast<Eigen::Index>(5 + m + request.dst)) = 1.0;
        for (std::size_t u = 0; u < m; ++u) {
            const auto& d = net.dc(u);
            row(static_cast<Eigen::Index>(5 + 2 * m + u)) = clamp01(cpu[u]);
            row(static_cast<Eigen::Index>(5 + 3 * m + u)) =
                std::isinf(d.bw_capacity) ? 1.0 : clamp01((d.bw_capacity - d.bw_used) / d.bw_capacity);
        }
    }
    return s;
}

TimeUnits e2e_latency(const Assignment& assignment, const SfcRequest& request, const LatencyMatrix& latency) {
    if (assignment.targets.size() != request.vnfs.size())
        throw UsageError("assignment length differs from VNF count");
    TimeUnits total = 0.0;
    DcIndex prev = request.src;
    for (DcIndex t : assignment.targets) {
        total += latency(prev, t);
        prev = t;
    }
    return total + latency(prev, request.dst);
}

RouteMapping route(const Assignment& assignment, const SfcRequest& request, const SubstrateNetwork& net) {
    check_assignment(assignment, request, net.num_dcs());
    const auto seq = hops(assignment, request);
    RouteMapping out;
    for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
        out.latency.push_back(net.latency()(seq[k], seq[k + 1]));
        out.links.push_back(net.path(seq[k], seq[k + 1]));
    }
    return out;
}

Assignment decode_actions(const ActionMatrix& actions) {
    Assignment a;
    a.targets.reserve(static_cast<std::size_t>(actions.rows()));
    for (Eigen::Index i = 0; i < actions.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < actions.cols(); ++j)
            if (actions(i, j) > actions(i, best)) best = j;
        a.targets.push_back(static_cast<DcIndex>(best));
    }
    return a;
}

void AdmissionController::expire(TimeUnits now) {
    auto end = active_.upper_bound(now);
    for (auto it = active_.begin(); it != end; ++it) net_.release(it->second.receipt);
    active_.erase(active_.begin(), end);
}

AdmissionOutcome AdmissionController::admit(const SfcRequest& request, const Assignment& assignment, TimeUnits now) {
    if (now != request.t_arr) throw UsageError("admit expects now == request arrival time");
    check_assignment(assignment, request, net_.num_dcs());
    expire(now);

    std::map<DcIndex, std::vector<Cpu>> demands;
    for (std::size_t i = 0; i < assignment.targets.size(); ++i)
        demands[assignment.targets[i]].push_back(Cpu::from_fraction(request.vnfs[i].cpu_demand));

    AdmissionOutcome out;
    auto result = net_.allocate(demands);
    if (auto* fail = std::get_if<CapacityFailure>(&result)) {
        out.verdict = Verdict::RejectedCpu;
        out.failed_dc = fail->dc;
        return out;
    }
    auto receipt = std::get<AllocationReceipt>(std::move(result));

    if (net_.bandwidth_limited()) {
        const auto seq = hops(assignment, request);
        std::map<DcIndex, double> dc_bw;
        std::map<std::size_t, double> link_bw;
        for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
            const double demand = k < request.vlink_bw.size() ? request.vlink_bw[k] : 0.0;
            if (seq[k] == seq[k + 1]) {
                dc_bw[seq[k]] += demand;
            } else {
                for (std::size_t li : net_.path(seq[k], seq[k + 1])) link_bw[li] += demand;
            }
        }
        if (!net_.reserve_bandwidth(receipt, dc_bw, link_bw)) {
            net_.release(receipt);
            out.verdict = Verdict::RejectedBandwidth;
            return out;
        }
    }

    out.e2e_latency = e2e_latency(assignment, request, net_.latency());
    if (*out.e2e_latency > request.l_sla) {
        net_.release(receipt);
        out.verdict = Verdict::RejectedSla;
        return out;
    }
    out.verdict = Verdict::Accepted;
    const TimeUnits expiry = now + request.t_delta;
    active_.emplace(expiry, ActiveService{std::move(receipt), expiry});
    return out;
}

SfcEnv::SfcEnv(SubstrateNetwork pristine, Workload workload, EnvOptions options)
    : pristine_(std::move(pristine)), workload_(std::move(workload)), options_(options) {
    reset();
}

StateMatrix SfcEnv::reset() {
    admission_ = AdmissionController(pristine_);
    cursor_ = 0;
    horizon_ = workload_.empty() ? 1.0 : workload_.back().t_arr;
    if (!(horizon_ > 0.0)) horizon_ = 1.0;
    return done() ? StateMatrix{} : state();
}

StateMatrix SfcEnv::reset(Workload workload) {
    workload_ = std::move(workload);
    return reset();
}

StateMatrix SfcEnv::reset(SubstrateNetwork pristine, Workload workload) {
    pristine_ = std::move(pristine);
    workload_ = std::move(workload);
    return reset();
}

const SfcRequest& SfcEnv::current() const {
    if (done()) throw UsageError("no current request: episode is done");
    return workload_[cursor_];
}

StateMatrix SfcEnv::state() const { return encode_state(current(), network(), horizon_, options_); }

StepResult SfcEnv::step(const Assignment& assignment) {
    if (done()) throw UsageError("step called after the episode finished");
    const auto& req = workload_[cursor_];
    StepResult r;
    r.assignment = assignment;
    r.outcome = admission_.admit(req, assignment, req.t_arr);
    r.reward = r.outcome.accepted() ? 1.0 : 0.0;
    ++cursor_;
    r.done = done();
    if (!r.done) {
        // the next decision sees the substrate as of its own arrival time
        admission_.expire(workload_[cursor_].t_arr);
        r.next_state = state();
    }
    return r;
}

StepResult SfcEnv::step(const ActionMatrix& relaxed_actions) {
    if (done()) throw UsageError("step called after the episode finished");
    if (static_cast<std::size_t>(relaxed_actions.rows()) != current().vnfs.size() ||
        static_cast<std::size_t>(relaxed_actions.cols()) != num_dcs())
        throw UsageError("action matrix must be n x m");
    return step(decode_actions(relaxed_actions));
}

}  // namespace sfcp
