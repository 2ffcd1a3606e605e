#include "sfcp/diffcomp/checkpoint.hpp"

#include <fstream>

namespace sfcp::dc {

using nlohmann::json;

json mat_to_json(const Mat& m) {
    json j;
    j["shape"] = {m.rows(), m.cols()};
    j["values"] = std::vector<double>(m.data(), m.data() + m.size());
    return j;
}

Mat mat_from_json(const json& j) {
    const auto r = j.at("shape").at(0).get<Eigen::Index>();
    const auto c = j.at("shape").at(1).get<Eigen::Index>();
    const auto v = j.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != r * c) throw GenerationError("checkpoint values do not match shape");
    Mat m(r, c);
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

json params_to_json(const ParamList& ps, const json& extra) {
    json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = kCheckpointVersion;
    json& params = doc["params"] = json::object();
    for (const Param* p : ps) {
        if (params.contains(p->name)) throw UsageError("duplicate parameter name " + p->name);
        params[p->name] = mat_to_json(p->value);
    }
    doc["extra"] = extra;
    return doc;
}

json params_from_json(const json& doc, const ParamList& ps) {
    if (doc.value("format", "") != kCheckpointFormat) throw GenerationError("not a parameter checkpoint");
    if (doc.value("version", 0) != kCheckpointVersion) throw GenerationError("unsupported checkpoint version");
    const json& params = doc.at("params");
    for (Param* p : ps) {
        if (!params.contains(p->name)) throw GenerationError("checkpoint lacks parameter " + p->name);
        Mat m = mat_from_json(params.at(p->name));
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
            throw GenerationError("checkpoint shape mismatch for " + p->name);
        p->value = std::move(m);
        p->zero_grad();
    }
    return doc.value("extra", json::object());
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& ps, const json& extra) {
    std::ofstream out(path);
    if (!out) throw GenerationError("cannot write " + path.string());
    out << params_to_json(ps, extra).dump() << '\n';
}

json load_checkpoint(const std::filesystem::path& path, const ParamList& ps) {
    std::ifstream in(path);
    if (!in) throw GenerationError("cannot read " + path.string());
    return params_from_json(json::parse(in), ps);
}

}  // namespace sfcp::dc
