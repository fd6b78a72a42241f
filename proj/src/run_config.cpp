#include "scanrl/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace scanrl {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key " + key + " needs a number, got \"" + value + "\"");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key " + key + " needs a non-negative integer, got \"" + value + "\"");
    }
}

int parse_int(const std::string& key, const std::string& value) {
    const std::uint64_t v = parse_u64(key, value);
    if (v > 1u << 30) throw ConfigError("config: key " + key + " value " + value + " out of range");
    return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("config: key " + key + " needs a boolean, got \"" + value + "\"");
}

}  // namespace

void apply_preset(RunConfig& cfg, const std::string& name) {
    const std::string dataset = cfg.dataset_path;
    const std::string out = cfg.out_dir;
    const std::string ckpt = cfg.checkpoint_path;
    if (name == "paper") {
        cfg.train = paper_train_config();
    } else if (name == "desk") {
        cfg.train = desk_train_config();
    } else {
        throw ConfigError("config: unknown preset \"" + name + "\" (paper or desk)");
    }
    cfg.preset = name;
    cfg.dataset_path = dataset;
    cfg.out_dir = out;
    cfg.checkpoint_path = ckpt;
}

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    TrainConfig& t = cfg.train;
    if (key == "preset") {
        apply_preset(cfg, value);
    } else if (key == "seed") {
        t.seed = parse_u64(key, value);
    } else if (key == "iterations") {
        t.iterations = parse_u64(key, value);
    } else if (key == "batch_size") {
        t.batch_size = parse_int(key, value);
    } else if (key == "replay_capacity") {
        t.replay_capacity = parse_u64(key, value);
    } else if (key == "hidden_size") {
        t.hidden_size = parse_int(key, value);
    } else if (key == "gen_base_channels") {
        t.gen_base_channels = parse_int(key, value);
    } else if (key == "gen_res_blocks") {
        t.gen_res_blocks = parse_int(key, value);
    } else if (key == "gamma") {
        t.gamma = static_cast<float>(parse_double(key, value));
    } else if (key == "beta_omega") {
        t.beta_omega = static_cast<float>(parse_double(key, value));
    } else if (key == "beta_theta") {
        t.beta_theta = static_cast<float>(parse_double(key, value));
    } else if (key == "beta_loss") {
        t.beta_loss = static_cast<float>(parse_double(key, value));
    } else if (key == "lr_actor") {
        t.lr_actor = static_cast<float>(parse_double(key, value));
    } else if (key == "lr_critic") {
        t.lr_critic = static_cast<float>(parse_double(key, value));
    } else if (key == "lr_gen") {
        t.lr_gen = static_cast<float>(parse_double(key, value));
    } else if (key == "lr_decay_base") {
        t.lr_decay_base = static_cast<float>(parse_double(key, value));
    } else if (key == "lr_decay_exponent") {
        t.lr_decay_exponent = static_cast<float>(parse_double(key, value));
    } else if (key == "saw_period_frac") {
        t.saw_period_frac = parse_double(key, value);
    } else if (key == "saw_floor") {
        t.saw_floor = static_cast<float>(parse_double(key, value));
    } else if (key == "saw_ramp_up") {
        t.saw_ramp_up = parse_bool(key, value);
    } else if (key == "ou_theta") {
        t.ou_theta = static_cast<float>(parse_double(key, value));
    } else if (key == "ou_sigma") {
        t.ou_sigma = static_cast<float>(parse_double(key, value));
    } else if (key == "ou_mean") {
        t.ou_mean = static_cast<float>(parse_double(key, value));
    } else if (key == "clip_enabled") {
        t.clip_enabled = parse_bool(key, value);
    } else if (key == "loss_variant") {
        if (value == "mse") {
            t.loss_variant = LossVariant::mse;
        } else if (value == "mse_sobel") {
            t.loss_variant = LossVariant::mse_sobel;
        } else if (value == "region_max") {
            t.loss_variant = LossVariant::region_max;
        } else {
            throw ConfigError("config: loss_variant must be mse, mse_sobel or region_max, got \"" + value + "\"");
        }
    } else if (key == "sobel_weight") {
        t.sobel_weight = static_cast<float>(parse_double(key, value));
    } else if (key == "region_size") {
        t.region_size = parse_int(key, value);
    } else if (key == "supervised") {
        if (value == "off") {
            t.supervised = SupervisedMode::off;
        } else if (value == "always") {
            t.supervised = SupervisedMode::always;
        } else if (value == "decayed") {
            t.supervised = SupervisedMode::decayed;
        } else {
            throw ConfigError("config: supervised must be off, always or decayed, got \"" + value + "\"");
        }
    } else if (key == "supervised_decay_iters") {
        t.supervised_decay_iters = parse_u64(key, value);
    } else if (key == "gen_weight_decay") {
        t.gen_weight_decay = static_cast<float>(parse_double(key, value));
    } else if (key == "actor_live_actions") {
        t.actor_live_actions = parse_bool(key, value);
    } else if (key == "train_fraction") {
        t.train_fraction = parse_double(key, value);
    } else if (key == "segments") {
        t.env.segments = parse_int(key, value);
    } else if (key == "samples_per_segment") {
        t.env.samples_per_segment = parse_int(key, value);
    } else if (key == "probe_spacing") {
        t.env.probe_spacing = static_cast<float>(parse_double(key, value));
    } else if (key == "image_height") {
        t.env.height = parse_int(key, value);
    } else if (key == "image_width") {
        t.env.width = parse_int(key, value);
    } else if (key == "over_edge_penalty") {
        t.env.over_edge_penalty = static_cast<float>(parse_double(key, value));
    } else if (key == "dataset") {
        cfg.dataset_path = value;
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "checkpoint") {
        cfg.checkpoint_path = value;
    } else {
        throw ConfigError("config: unknown key \"" + key + "\"");
    }
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    struct Entry {
        std::string key, value;
        int line;
    };
    std::vector<Entry> entries;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config " + origin + " line " + std::to_string(line_no) +
                              ": expected \"key = value\"");
        }
        entries.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no});
    }

    RunConfig cfg;
    // preset first so explicit keys override it regardless of file order
    for (const Entry& e : entries) {
        if (e.key == "preset") apply_preset(cfg, e.value);
    }
    for (const Entry& e : entries) {
        if (e.key == "preset") continue;
        try {
            set_config_key(cfg, e.key, e.value);
        } catch (const ConfigError& err) {
            throw ConfigError(std::string(err.what()) + " (" + origin + " line " + std::to_string(e.line) + ")");
        }
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string echo_config(const RunConfig& cfg) {
    const TrainConfig& t = cfg.train;
    std::ostringstream os;
    os.precision(10);
    os << "preset = " << cfg.preset << "\n";
    os << "seed = " << t.seed << "\n";
    os << "iterations = " << t.iterations << "\n";
    os << "batch_size = " << t.batch_size << "\n";
    os << "replay_capacity = " << t.replay_capacity << "\n";
    os << "hidden_size = " << t.hidden_size << "\n";
    os << "gen_base_channels = " << t.gen_base_channels << "\n";
    os << "gen_res_blocks = " << t.gen_res_blocks << "\n";
    os << "gamma = " << t.gamma << "\n";
    os << "beta_omega = " << t.beta_omega << "\n";
    os << "beta_theta = " << t.beta_theta << "\n";
    os << "beta_loss = " << t.beta_loss << "\n";
    os << "lr_actor = " << t.lr_actor << "\n";
    os << "lr_critic = " << t.lr_critic << "\n";
    os << "lr_gen = " << t.lr_gen << "\n";
    os << "lr_decay_base = " << t.lr_decay_base << "\n";
    os << "lr_decay_exponent = " << t.lr_decay_exponent << "\n";
    os << "saw_period_frac = " << t.saw_period_frac << "\n";
    os << "saw_floor = " << t.saw_floor << "\n";
    os << "saw_ramp_up = " << (t.saw_ramp_up ? "true" : "false") << "\n";
    os << "ou_theta = " << t.ou_theta << "\n";
    os << "ou_sigma = " << t.ou_sigma << "\n";
    os << "ou_mean = " << t.ou_mean << "\n";
    os << "clip_enabled = " << (t.clip_enabled ? "true" : "false") << "\n";
    os << "loss_variant = "
       << (t.loss_variant == LossVariant::mse
               ? "mse"
               : (t.loss_variant == LossVariant::mse_sobel ? "mse_sobel" : "region_max"))
       << "\n";
    os << "sobel_weight = " << t.sobel_weight << "\n";
    os << "region_size = " << t.region_size << "\n";
    os << "supervised = "
       << (t.supervised == SupervisedMode::off ? "off"
                                               : (t.supervised == SupervisedMode::always ? "always" : "decayed"))
       << "\n";
    os << "supervised_decay_iters = " << t.supervised_decay_iters << "\n";
    os << "gen_weight_decay = " << t.gen_weight_decay << "\n";
    os << "actor_live_actions = " << (t.actor_live_actions ? "true" : "false") << "\n";
    os << "train_fraction = " << t.train_fraction << "\n";
    os << "segments = " << t.env.segments << "\n";
    os << "samples_per_segment = " << t.env.samples_per_segment << "\n";
    os << "probe_spacing = " << t.env.probe_spacing << "\n";
    os << "image_height = " << t.env.height << "\n";
    os << "image_width = " << t.env.width << "\n";
    os << "over_edge_penalty = " << t.env.over_edge_penalty << "\n";
    os << "dataset = " << cfg.dataset_path << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "checkpoint = " << cfg.checkpoint_path << "\n";
    return os.str();
}

}  // namespace scanrl
