#include "roadopt/config.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "roadopt/costexpr.hpp"
#include "roadopt/errors.hpp"

namespace roadopt {

namespace {

using nlohmann::json;

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON (" + path + "): " + e.what());
    }
    return j;
}

const json& need(const json& j, const char* key, const char* where) {
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError(std::string("config is missing \"") + where + "." +
                          key + "\"");
    return *it;
}

double num(const json& j, const char* key, const char* where) {
    const json& v = need(j, key, where);
    if (!v.is_number())
        throw ConfigError(std::string("config field \"") + where + "." + key +
                          "\" must be a number");
    return v.get<double>();
}

std::string str(const json& j, const char* key, const char* where) {
    const json& v = need(j, key, where);
    if (!v.is_string())
        throw ConfigError(std::string("config field \"") + where + "." + key +
                          "\" must be a string");
    return v.get<std::string>();
}

// two departure-cost expressions agree on the window (sampled, 1e-12 scaled)
bool same_phi(const std::string& a, const std::string& b, double t_lo,
              double t_hi) {
    if (a == b) return true;
    costexpr::Expr ea = costexpr::parse(a, "t");
    costexpr::Expr eb = costexpr::parse(b, "t");
    for (int k = 0; k <= 64; ++k) {
        double t = t_lo + (t_hi - t_lo) * k / 64.0;
        double va = costexpr::eval(ea, t), vb = costexpr::eval(eb, t);
        if (std::fabs(va - vb) > 1e-12 * (1.0 + std::fabs(va))) return false;
    }
    return true;
}

} // namespace

FluxModel ProblemConfig::flux() const {
    return build_flux_model(velocity_src, rho_jam);
}

GroupSpec ProblemConfig::groups() const {
    return GroupSpec::parse(phi_src, names, sizes, psi_srcs);
}

SolveOptions ProblemConfig::options(Exec ex) const {
    SolveOptions o;
    o.t_lo = t_lo;
    o.t_hi = t_hi;
    o.arrival_grid = arrival_grid;
    o.departure_grid = departure_grid;
    o.residual_tol = residual_tol;
    o.max_iterations = max_iterations;
    o.multistarts = multistarts;
    o.seed = seed;
    o.ex = ex;
    return o;
}

ProblemConfig load_problem_config(const std::string& path) {
    json j = read_json(path);
    ProblemConfig cfg;

    const json& road = need(j, "road", "");
    cfg.velocity_src = str(road, "velocity", "road");
    cfg.rho_jam = num(road, "rho_jam", "road");
    cfg.length = num(road, "length", "road");
    if (!(cfg.length > 0.0)) throw ConfigError("road.length must be positive");

    const json& win = need(j, "window", "");
    cfg.t_lo = num(win, "t_lo", "window");
    cfg.t_hi = num(win, "t_hi", "window");
    if (!(cfg.t_lo < cfg.t_hi))
        throw ConfigError("window.t_lo must be below window.t_hi");

    const json& groups = need(j, "groups", "");
    if (!groups.is_array() || groups.empty())
        throw ConfigError("config needs a nonempty \"groups\" array");
    for (const auto& g : groups) {
        cfg.names.push_back(str(g, "name", "groups[]"));
        cfg.sizes.push_back(num(g, "size", "groups[]"));
        cfg.psi_srcs.push_back(str(g, "psi", "groups[]"));
        std::string phi = str(g, "phi", "groups[]");
        if (cfg.phi_src.empty()) {
            cfg.phi_src = phi;
        } else if (!same_phi(cfg.phi_src, phi, cfg.t_lo, cfg.t_hi)) {
            throw ConfigError(
                "all groups must share one departure cost phi; group \"" +
                cfg.names.back() + "\" uses a different expression");
        }
    }

    if (auto it = j.find("solver"); it != j.end()) {
        const json& s = *it;
        if (s.contains("arrival_grid"))
            cfg.arrival_grid = static_cast<int>(num(s, "arrival_grid", "solver"));
        if (s.contains("departure_grid"))
            cfg.departure_grid =
                static_cast<int>(num(s, "departure_grid", "solver"));
        if (s.contains("residual_tol"))
            cfg.residual_tol = num(s, "residual_tol", "solver");
        if (s.contains("max_iterations"))
            cfg.max_iterations =
                static_cast<int>(num(s, "max_iterations", "solver"));
        if (s.contains("multistarts"))
            cfg.multistarts = static_cast<int>(num(s, "multistarts", "solver"));
        if (s.contains("seed"))
            cfg.seed = static_cast<unsigned>(num(s, "seed", "solver"));
    }
    if (auto it = j.find("oracle"); it != j.end()) {
        const json& s = *it;
        if (s.contains("bins"))
            cfg.oracle_bins = static_cast<int>(num(s, "bins", "oracle"));
        if (s.contains("starts"))
            cfg.oracle_starts = static_cast<int>(num(s, "starts", "oracle"));
        if (s.contains("refine"))
            cfg.oracle_refine = static_cast<int>(num(s, "refine", "oracle"));
        if (s.contains("window")) {
            const json& w = s["window"];
            if (!w.is_array() || w.size() != 2)
                throw ConfigError("oracle.window must be [lo, hi]");
            cfg.oracle_w_lo = w[0].get<double>();
            cfg.oracle_w_hi = w[1].get<double>();
        }
        if (s.contains("dt")) cfg.oracle_dt = num(s, "dt", "oracle");
    }
    if (auto it = j.find("check"); it != j.end()) {
        const json& s = *it;
        if (s.contains("support_tol"))
            cfg.check_support_tol = num(s, "support_tol", "check");
        if (s.contains("off_support_tol"))
            cfg.check_off_tol = num(s, "off_support_tol", "check");
        if (s.contains("mass_tol"))
            cfg.check_mass_tol = num(s, "mass_tol", "check");
        if (s.contains("samples"))
            cfg.check_samples = static_cast<int>(num(s, "samples", "check"));
    }

    // semantic checks: the flux law builds, the costs have the right shape
    FluxModel m = cfg.flux();
    (void)m;
    GroupSpec spec = cfg.groups();
    spec.validate(cfg.t_lo, cfg.t_hi);
    return cfg;
}

JunctionFileConfig load_junction_config(const std::string& path) {
    json j = read_json(path);
    const json& junc = need(j, "junction", "");

    JunctionFileConfig out;
    out.model = str(junc, "model", "junction");
    if (out.model != "lp" && out.model != "priority" &&
        out.model != "stopsign" && out.model != "buffer")
        throw ConfigError("junction.model must be lp, priority, stopsign, or buffer");

    auto load_roads = [&](const char* key, std::vector<FluxModel>& models,
                          std::vector<double>& rho) {
        const json& arr = need(junc, key, "junction");
        if (!arr.is_array() || arr.empty())
            throw ConfigError(std::string("junction.") + key +
                              " must be a nonempty array");
        for (const auto& r : arr) {
            models.push_back(build_flux_model(str(r, "velocity", key),
                                              num(r, "rho_jam", key)));
            rho.push_back(num(r, "density", key));
        }
    };
    load_roads("incoming", out.junction.in_models, out.rho_in);
    load_roads("outgoing", out.junction.out_models, out.rho_out);

    const json& pri = need(junc, "priorities", "junction");
    if (!pri.is_array())
        throw ConfigError("junction.priorities must be an array");
    for (const auto& v : pri) out.junction.priority.push_back(v.get<double>());

    const json& turn = need(junc, "turning", "junction");
    if (!turn.is_array())
        throw ConfigError("junction.turning must be an array of rows");
    for (const auto& row : turn) {
        if (!row.is_array())
            throw ConfigError("junction.turning rows must be arrays");
        out.junction.turning.push_back(row.get<std::vector<double>>());
    }

    if (out.model == "buffer") {
        const json& buf = need(junc, "buffer", "junction");
        out.junction.buffer_capacity = num(buf, "capacity", "junction.buffer");
        if (!(out.junction.buffer_capacity > 0.0))
            throw ConfigError("junction.buffer.capacity must be positive");
        if (buf.contains("t_end"))
            out.t_end = num(buf, "t_end", "junction.buffer");
    }

    out.junction.validate();
    if (out.rho_in.size() != out.junction.in_models.size() ||
        out.rho_out.size() != out.junction.out_models.size())
        throw ConfigError("junction density counts do not match the roads");
    return out;
}

} // namespace roadopt
