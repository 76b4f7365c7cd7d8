#include "cli.hpp"

#include <algorithm>
#include <fstream>

#include "hybridseg/errors.hpp"

namespace hseg::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<ConfigEntry> parse_config_file(const std::string& path,
                                           const std::vector<std::string>& known_keys) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");

    std::vector<ConfigEntry> out;
    std::string raw;
    int line = 0;
    while (std::getline(f, raw)) {
        ++line;
        const auto hash = raw.find('#');
        std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line) + ": expected 'key = value', got '" +
                              text + "'");
        }
        ConfigEntry e;
        e.key = trim(text.substr(0, eq));
        e.value = trim(text.substr(eq + 1));
        e.line = line;
        if (e.key.empty() || e.value.empty()) {
            throw ConfigError(path + ":" + std::to_string(line) + ": empty key or value");
        }
        if (std::find(known_keys.begin(), known_keys.end(), e.key) == known_keys.end()) {
            throw ConfigError(path + ":" + std::to_string(line) + ": unknown key '" + e.key + "'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys{
        "data",       "val",    "checkpoint-dir",   "resume",       "arch",
        "epochs",     "batch-size", "checkpoint-every", "lr",       "lambda",
        "seed",       "val-fraction",
    };
    return keys;
}

void apply_train_config_entry(TrainArgs& a, const ConfigEntry& e) {
    auto bad = [&](const char* what) {
        return ConfigError("config line " + std::to_string(e.line) + ": '" + e.key +
                           "' expects " + what + ", got '" + e.value + "'");
    };
    auto to_int = [&](int lo) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(e.value, &used);
            if (used != e.value.size() || v < lo) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw bad("an integer");
        }
    };
    auto to_double = [&]() {
        try {
            std::size_t used = 0;
            const double v = std::stod(e.value, &used);
            if (used != e.value.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw bad("a number");
        }
    };

    if (e.key == "data") a.data = e.value;
    else if (e.key == "val") a.val = e.value;
    else if (e.key == "checkpoint-dir") a.checkpoint_dir = e.value;
    else if (e.key == "resume") a.resume = e.value;
    else if (e.key == "arch") a.arch = e.value;
    else if (e.key == "epochs") a.epochs = to_int(0);
    else if (e.key == "batch-size") a.batch_size = to_int(1);
    else if (e.key == "checkpoint-every") a.checkpoint_every = to_int(0);
    else if (e.key == "lr") a.lr = static_cast<float>(to_double());
    else if (e.key == "lambda") a.lambda = static_cast<float>(to_double());
    else if (e.key == "seed") {
        try {
            a.seed = std::stoull(e.value);
        } catch (...) {
            throw bad("an unsigned integer");
        }
    } else if (e.key == "val-fraction") a.val_fraction = to_double();
}

}  // namespace hseg::cli
