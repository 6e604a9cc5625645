#include "ggds/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ggds {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T> T parse_number(const std::string &v) {
    T out{};
    const auto *end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, out);
    if (r.ec != std::errc() || r.ptr != end)
        throw std::invalid_argument("not a number: '" + v + "'");
    return out;
}

bool parse_bool(const std::string &v) {
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

struct Field {
    std::string key;
    std::function<void(GgdsConfig &, const std::string &)> set;
    std::function<std::string(const GgdsConfig &)> get;
};

#define GGDS_NUM(name, member, type)                                                                              \
    Field {                                                                                                       \
        name, [](GgdsConfig &c, const std::string &v) { c.member = parse_number<type>(v); },                      \
            [](const GgdsConfig &c) { return fmt(double(c.member)); }                                             \
    }
#define GGDS_INT(name, member, type)                                                                              \
    Field {                                                                                                       \
        name, [](GgdsConfig &c, const std::string &v) { c.member = parse_number<type>(v); },                      \
            [](const GgdsConfig &c) { return std::to_string(c.member); }                                          \
    }

const std::vector<Field> &fields() {
    static const std::vector<Field> f = {
        GGDS_INT("steps", steps, int),
        GGDS_INT("denoise_steps", denoise_steps, int),
        GGDS_INT("t_max", t_max, int),
        GGDS_INT("t_min_start", t_min_start, int),
        GGDS_INT("t_min_end", t_min_end, int),
        Field{"omega",
              [](GgdsConfig &c, const std::string &v) {
                  if (v == "constant")
                      c.weights.omega = NoiseWeighting::Constant;
                  else if (v == "snr_power")
                      c.weights.omega = NoiseWeighting::SnrPower;
                  else
                      throw std::invalid_argument("expected constant or snr_power, got '" + v + "'");
              },
              [](const GgdsConfig &c) {
                  return std::string(c.weights.omega == NoiseWeighting::Constant ? "constant" : "snr_power");
              }},
        GGDS_NUM("omega_power", weights.omega_power, double),
        GGDS_NUM("lambda_lpips", weights.lpips, double),
        GGDS_NUM("lambda_norm", weights.norm, double),
        GGDS_NUM("lambda_disp", weights.disp, double),
        GGDS_NUM("lambda_tv", weights.tv, double),
        GGDS_NUM("lambda_distortion", weights.distortion, double),
        GGDS_NUM("lambda_normal_consistency", weights.normal_consistency, double),
        GGDS_NUM("xi_position", xi.position, double),
        GGDS_NUM("xi_opacity", xi.opacity, double),
        GGDS_NUM("xi_scale", xi.scale, double),
        GGDS_NUM("xi_tangent", xi.tangent, double),
        GGDS_NUM("xi_color", xi.color, double),
        GGDS_NUM("lambda_noise", lambda_noise, double),
        GGDS_NUM("noise_decay_fraction", noise_decay_fraction, double),
        Field{"raw_sign", [](GgdsConfig &c, const std::string &v) { c.raw_sign = parse_bool(v); },
              [](const GgdsConfig &c) { return std::string(c.raw_sign ? "true" : "false"); }},
        Field{"preconditioner",
              [](GgdsConfig &c, const std::string &v) {
                  if (v == "adam")
                      c.preconditioner = Preconditioner::Adam;
                  else if (v == "none")
                      c.preconditioner = Preconditioner::None;
                  else
                      throw std::invalid_argument("expected adam or none, got '" + v + "'");
              },
              [](const GgdsConfig &c) {
                  return std::string(c.preconditioner == Preconditioner::Adam ? "adam" : "none");
              }},
        GGDS_NUM("adam_beta1", adam_beta1, double),
        GGDS_NUM("adam_beta2", adam_beta2, double),
        GGDS_NUM("adam_epsilon", adam_epsilon, double),
        GGDS_INT("splat_cap", splat_cap, std::size_t),
        GGDS_INT("densify_every", densify_every, int),
        GGDS_NUM("densify_until", densify_until, double),
        GGDS_NUM("prune_opacity", prune_opacity, double),
        GGDS_NUM("prune_min_radius", prune_min_radius, double),
        GGDS_NUM("split_grad_threshold", split_grad_threshold, double),
        GGDS_NUM("split_scale_fraction", split_scale_fraction, double),
        Field{"noise_mode",
              [](GgdsConfig &c, const std::string &v) {
                  if (v == "inversion")
                      c.noise_mode = NoiseMode::Inversion;
                  else if (v == "random")
                      c.noise_mode = NoiseMode::Random;
                  else
                      throw std::invalid_argument("expected inversion or random, got '" + v + "'");
              },
              [](const GgdsConfig &c) {
                  return std::string(c.noise_mode == NoiseMode::Inversion ? "inversion" : "random");
              }},
        GGDS_INT("inversion_refine", inversion_refine, int),
        Field{"schedule",
              [](GgdsConfig &c, const std::string &v) {
                  if (v == "linear")
                      c.schedule = ScheduleKind::Linear;
                  else if (v == "cosine")
                      c.schedule = ScheduleKind::Cosine;
                  else
                      throw std::invalid_argument("expected linear or cosine, got '" + v + "'");
              },
              [](const GgdsConfig &c) { return std::string(c.schedule == ScheduleKind::Linear ? "linear" : "cosine"); }},
        GGDS_INT("schedule_steps", schedule_steps, int),
        GGDS_INT("codec_factor", codec_factor, int),
        GGDS_NUM("deferred_alpha_bar", deferred_alpha_bar, double),
        GGDS_INT("jitter_views", jitter_views, int),
        GGDS_INT("threads", threads, int),
        GGDS_INT("checkpoint_every", checkpoint_every, int),
        GGDS_INT("seed", seed, std::uint64_t),
    };
    return f;
}

#undef GGDS_NUM
#undef GGDS_INT

} // namespace

GgdsConfig parse_config(const std::string &text, const GgdsConfig &base) {
    std::map<std::string, const Field *> by_key;
    for (const auto &f : fields())
        by_key[f.key] = &f;
    GgdsConfig c = base;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty())
            continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line) + ": expected key = value", line);
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end())
            throw ConfigError("config line " + std::to_string(line) + ": unknown key '" + key + "'", line);
        if (!seen.insert(key).second)
            throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" + key + "'", line);
        try {
            it->second->set(c, value);
        } catch (const std::exception &e) {
            throw ConfigError("config line " + std::to_string(line) + ": " + key + ": " + e.what(), line);
        }
    }
    return c;
}

GgdsConfig load_config(const std::string &path, const GgdsConfig &base) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base);
}

std::string format_config(const GgdsConfig &config) {
    std::string out;
    for (const auto &f : fields())
        out += f.key + " = " + f.get(config) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto &f : fields())
        keys.push_back(f.key);
    return keys;
}

} // namespace ggds
