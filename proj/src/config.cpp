#include "splitguard/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>
#include <vector>

#include "splitguard/errors.hpp"

namespace splitguard {

namespace {

using IntField = int ExperimentConfig::*;
using U64Field = std::uint64_t ExperimentConfig::*;
using DoubleField = double ExperimentConfig::*;
using BoolField = bool ExperimentConfig::*;
using StringField = std::string ExperimentConfig::*;
using AnyField = std::variant<IntField, U64Field, DoubleField, BoolField, StringField>;

struct Binding {
    const char* name;
    AnyField field;
};

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = {
        {"seed", &ExperimentConfig::seed},
        {"clients", &ExperimentConfig::clients},
        {"malicious_ratio", &ExperimentConfig::malicious_ratio},
        {"rounds", &ExperimentConfig::rounds},
        {"batch_size", &ExperimentConfig::batch_size},
        {"local_epochs", &ExperimentConfig::local_epochs},
        {"participation", &ExperimentConfig::participation},
        {"lr", &ExperimentConfig::lr},
        {"momentum", &ExperimentConfig::momentum},
        {"aggregator", &ExperimentConfig::aggregator},
        {"krum_trim_param", &ExperimentConfig::krum_trim_param},
        {"server_replicas", &ExperimentConfig::server_replicas},
        {"dataset", &ExperimentConfig::dataset},
        {"classes", &ExperimentConfig::classes},
        {"features", &ExperimentConfig::features},
        {"per_class", &ExperimentConfig::per_class},
        {"spread", &ExperimentConfig::spread},
        {"noniid_q", &ExperimentConfig::noniid_q},
        {"test_fraction", &ExperimentConfig::test_fraction},
        {"idx_images", &ExperimentConfig::idx_images},
        {"idx_labels", &ExperimentConfig::idx_labels},
        {"idx_downsample", &ExperimentConfig::idx_downsample},
        {"bottleneck", &ExperimentConfig::bottleneck},
        {"client_hidden", &ExperimentConfig::client_hidden},
        {"server_hidden", &ExperimentConfig::server_hidden},
        {"attack", &ExperimentConfig::attack},
        {"delta_y", &ExperimentConfig::delta_y},
        {"delta_x", &ExperimentConfig::delta_x},
        {"delta_z", &ExperimentConfig::delta_z},
        {"delta_theta", &ExperimentConfig::delta_theta},
        {"wp_mode", &ExperimentConfig::wp_mode},
        {"adaptive", &ExperimentConfig::adaptive},
        {"lambda_a", &ExperimentConfig::lambda_a},
        {"adaptive_k", &ExperimentConfig::adaptive_k},
        {"attack_iterative", &ExperimentConfig::attack_iterative},
        {"attack_epochs", &ExperimentConfig::attack_epochs},
        {"attack_lr", &ExperimentConfig::attack_lr},
        {"defense", &ExperimentConfig::defense},
        {"defense_warmup", &ExperimentConfig::defense_warmup},
        {"detect_k", &ExperimentConfig::detect_k},
        {"ppr_alpha", &ExperimentConfig::ppr_alpha},
        {"ppr_eps", &ExperimentConfig::ppr_eps},
        {"ppr_tol", &ExperimentConfig::ppr_tol},
        {"ppr_max_iter", &ExperimentConfig::ppr_max_iter},
        {"teleport", &ExperimentConfig::teleport},
        {"kde_rho", &ExperimentConfig::kde_rho},
        {"detect_per_class", &ExperimentConfig::detect_per_class},
        {"dump_scores", &ExperimentConfig::dump_scores},
        {"gan_steps", &ExperimentConfig::gan_steps},
        {"gan_lr", &ExperimentConfig::gan_lr},
        {"gan_noise_dim", &ExperimentConfig::gan_noise_dim},
        {"gan_hidden", &ExperimentConfig::gan_hidden},
        {"gan_min_class", &ExperimentConfig::gan_min_class},
        {"gan_batch", &ExperimentConfig::gan_batch},
        {"gan_every", &ExperimentConfig::gan_every},
        {"candidate_budget", &ExperimentConfig::candidate_budget},
        {"gate_conf", &ExperimentConfig::gate_conf},
        {"refresh_every", &ExperimentConfig::refresh_every},
        {"ad_epochs", &ExperimentConfig::ad_epochs},
        {"ad_lr", &ExperimentConfig::ad_lr},
        {"lambda_b", &ExperimentConfig::lambda_b},
        {"lambda_c", &ExperimentConfig::lambda_c},
        {"beta", &ExperimentConfig::beta},
        {"influence_refresh", &ExperimentConfig::influence_refresh},
        {"r_mode", &ExperimentConfig::r_mode},
        {"vanilla_epochs", &ExperimentConfig::vanilla_epochs},
        {"student_epochs", &ExperimentConfig::student_epochs},
        {"teacher_lr", &ExperimentConfig::teacher_lr},
        {"reservoir_ratio", &ExperimentConfig::reservoir_ratio},
        {"tau", &ExperimentConfig::tau},
        {"distill_m", &ExperimentConfig::distill_m},
        {"kappa", &ExperimentConfig::kappa},
        {"distill_eps", &ExperimentConfig::distill_eps},
        {"mu0", &ExperimentConfig::mu0},
        {"eta0", &ExperimentConfig::eta0},
        {"student_lambda_b", &ExperimentConfig::student_lambda_b},
        {"ablate_vanilla", &ExperimentConfig::ablate_vanilla},
        {"ablate_ad", &ExperimentConfig::ablate_ad},
        {"ablate_distill", &ExperimentConfig::ablate_distill},
        {"sgv_every", &ExperimentConfig::sgv_every},
        {"out_dir", &ExperimentConfig::out_dir},
        {"run_name", &ExperimentConfig::run_name},
    };
    return table;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (...) {
        throw ConfigError("field '" + key + "': expected integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("field '" + key + "': expected integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (...) {
        throw ConfigError("field '" + key + "': expected number, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("field '" + key + "': expected number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("field '" + key + "': expected boolean, got '" + v + "'");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const Binding& b : bindings()) {
        if (key != b.name) continue;
        std::visit(
            [&](auto field) {
                using T = std::remove_reference_t<decltype(cfg.*field)>;
                if constexpr (std::is_same_v<T, int>) {
                    cfg.*field = static_cast<int>(parse_int(key, value));
                } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                    cfg.*field = static_cast<std::uint64_t>(parse_int(key, value));
                } else if constexpr (std::is_same_v<T, double>) {
                    cfg.*field = parse_double(key, value);
                } else if constexpr (std::is_same_v<T, bool>) {
                    cfg.*field = parse_bool(key, value);
                } else {
                    cfg.*field = value;
                }
            },
            b.field);
        return;
    }
    throw ConfigError("unknown key: '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    for (const Binding& b : bindings()) {
        os << b.name << " = ";
        std::visit(
            [&](auto field) {
                using T = std::remove_reference_t<decltype(cfg.*field)>;
                if constexpr (std::is_same_v<T, double>) {
                    os << format_double(cfg.*field);
                } else if constexpr (std::is_same_v<T, bool>) {
                    os << ((cfg.*field) ? "true" : "false");
                } else {
                    os << cfg.*field;
                }
            },
            b.field);
        os << "\n";
    }
    return os.str();
}

AttackMask parse_attack_mask(const std::string& s) {
    AttackMask m;
    if (s.empty() || s == "none") return m;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t plus = s.find('+', pos);
        const std::string tok = trim(s.substr(pos, plus == std::string::npos ? plus : plus - pos));
        if (tok == "lp") m.lp = true;
        else if (tok == "dp") m.dp = true;
        else if (tok == "sp") m.sp = true;
        else if (tok == "wp") m.wp = true;
        else throw ConfigError("field 'attack': unknown attack '" + tok + "'");
        if (plus == std::string::npos) break;
        pos = plus + 1;
    }
    return m;
}

std::string attack_mask_name(const AttackMask& m) {
    std::string out;
    auto append = [&](const char* t) {
        if (!out.empty()) out += '+';
        out += t;
    };
    if (m.lp) append("lp");
    if (m.dp) append("dp");
    if (m.sp) append("sp");
    if (m.wp) append("wp");
    return out.empty() ? "none" : out;
}

void validate_config(const ExperimentConfig& cfg) {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(cfg.clients >= 1, "field 'clients': must be >= 1");
    require(cfg.malicious_ratio >= 0.0 && cfg.malicious_ratio <= 1.0,
            "field 'malicious_ratio': outside [0,1]");
    require(cfg.rounds >= 1, "field 'rounds': must be >= 1");
    require(cfg.batch_size >= 1, "field 'batch_size': must be >= 1");
    require(cfg.local_epochs >= 1, "field 'local_epochs': must be >= 1");
    require(cfg.participation > 0.0 && cfg.participation <= 1.0,
            "field 'participation': outside (0,1]");
    require(cfg.lr > 0.0, "field 'lr': must be positive");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "field 'momentum': outside [0,1)");
    require(cfg.aggregator == "fedavg" || cfg.aggregator == "median" ||
                cfg.aggregator == "trimmed_mean" || cfg.aggregator == "krum",
            "field 'aggregator': unknown value '" + cfg.aggregator + "'");
    require(cfg.dataset == "synthetic" || cfg.dataset == "idx",
            "field 'dataset': unknown value '" + cfg.dataset + "'");
    require(cfg.classes >= 2, "field 'classes': must be >= 2");
    require(cfg.noniid_q >= 0.0 && cfg.noniid_q <= 1.0, "field 'noniid_q': outside [0,1]");
    require(cfg.test_fraction >= 0.0 && cfg.test_fraction < 1.0,
            "field 'test_fraction': outside [0,1)");
    require(cfg.bottleneck >= 1, "field 'bottleneck': must be >= 1");
    parse_attack_mask(cfg.attack);
    require(cfg.delta_x >= 0.0, "field 'delta_x': must be >= 0");
    require(cfg.delta_z >= 0.0, "field 'delta_z': must be >= 0");
    require(cfg.delta_theta >= 0.0, "field 'delta_theta': must be >= 0");
    require(cfg.wp_mode == "signflip" || cfg.wp_mode == "gaussian",
            "field 'wp_mode': unknown value '" + cfg.wp_mode + "'");
    require(cfg.lambda_a >= 0.0 && cfg.lambda_a <= 1.0, "field 'lambda_a': outside [0,1]");
    require(cfg.adaptive_k >= 1, "field 'adaptive_k': must be >= 1");
    require(cfg.detect_k >= 1, "field 'detect_k': must be >= 1");
    require(cfg.ppr_alpha > 0.0 && cfg.ppr_alpha < 1.0, "field 'ppr_alpha': outside (0,1)");
    require(cfg.ppr_eps > 0.0, "field 'ppr_eps': must be positive");
    require(cfg.ppr_tol > 0.0, "field 'ppr_tol': must be positive");
    require(cfg.ppr_max_iter >= 1, "field 'ppr_max_iter': must be >= 1");
    require(cfg.teleport == "degree" || cfg.teleport == "uniform" ||
                cfg.teleport == "inverse_degree",
            "field 'teleport': unknown value '" + cfg.teleport + "'");
    require(cfg.kde_rho > 0.0 && cfg.kde_rho < 100.0, "field 'kde_rho': outside (0,100)");
    require(cfg.gan_min_class >= 2, "field 'gan_min_class': must be >= 2");
    require(cfg.candidate_budget >= 1, "field 'candidate_budget': must be >= 1");
    require(cfg.gate_conf >= 0.0 && cfg.gate_conf <= 1.0, "field 'gate_conf': outside [0,1]");
    require(cfg.beta > 0.0 && cfg.beta < 1.0, "field 'beta': outside (0,1)");
    require(cfg.r_mode == "outer" || cfg.r_mode == "broadcast",
            "field 'r_mode': unknown value '" + cfg.r_mode + "'");
    require(cfg.tau > 0.0, "field 'tau': must be positive");
    require(cfg.distill_m > 0.0 && cfg.distill_m <= 1.0, "field 'distill_m': outside (0,1]");
    require(cfg.mu0 > 0.0 && cfg.mu0 < 1.0, "field 'mu0': outside (0,1)");
    require(cfg.eta0 > 0.0 && cfg.eta0 < 1.0, "field 'eta0': outside (0,1)");
    require(cfg.reservoir_ratio >= 0.0 && cfg.reservoir_ratio <= 1.0,
            "field 'reservoir_ratio': outside [0,1]");
    require(cfg.refresh_every >= 1, "field 'refresh_every': must be >= 1");
    require(cfg.gan_every >= 1, "field 'gan_every': must be >= 1");
    require(cfg.influence_refresh >= 1, "field 'influence_refresh': must be >= 1");
    require(cfg.defense_warmup >= 0, "field 'defense_warmup': must be >= 0");
    require(cfg.sgv_every >= 0, "field 'sgv_every': must be >= 0");
}

}  // namespace splitguard
