#include "hsml/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hsml/error.hpp"
#include "text_util.hpp"

namespace hsml {

namespace pt = boost::property_tree;

namespace {

std::size_t to_size(const std::string& field, const std::string& v) {
    std::size_t out = 0;
    const std::string t = detail::trim(v);
    auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size())
        throw InvalidConfig(field + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& field, const std::string& v) {
    std::uint64_t out = 0;
    const std::string t = detail::trim(v);
    auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size())
        throw InvalidConfig(field + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& field, const std::string& v) {
    auto d = detail::parse_double(v);
    if (!d) throw InvalidConfig(field + ": expected a number, got '" + v + "'");
    return *d;
}

bool to_bool(const std::string& field, const std::string& v) {
    const std::string t = detail::trim(v);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw InvalidConfig(field + ": expected true or false, got '" + v + "'");
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
    return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

} // namespace

std::vector<std::size_t> parse_size_list(const std::string& field, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(field, item));
    if (out.empty()) throw InvalidConfig(field + ": expected a comma-separated list of integers");
    return out;
}

void RunConfig::validate() const {
    if (corpus.empty()) throw InvalidConfig("data.corpus: no corpus directory given");
    model.validate();
    train.validate();
    if (eval.shots.empty() || eval.trials == 0) throw InvalidConfig("eval.shots and eval.trials must be non-empty");
    for (auto k : eval.shots)
        if (k == 0) throw InvalidConfig("eval.shots entries must be >= 1");
}

std::map<std::string, std::map<std::string, std::string>> RunConfig::to_sections() const {
    using detail::format_double;
    std::map<std::string, std::map<std::string, std::string>> s;
    s["data"]["corpus"] = corpus.string();
    s["output"]["dir"] = output_dir.string();
    s["model"] = model.to_map();
    auto& t = s["train"];
    t["learning_rate"] = format_double(train.learning_rate);
    t["episodes_per_step"] = std::to_string(train.episodes_per_step);
    t["max_epochs"] = std::to_string(train.max_epochs);
    t["validation_interval"] = std::to_string(train.validation_interval);
    t["patience"] = std::to_string(train.patience);
    t["seed"] = std::to_string(train.seed);
    t["head"] = to_string(train.head);
    t["clip_norm"] = format_double(train.clip_norm);
    t["shots"] = join(train.train_shots);
    t["validation_trials"] = std::to_string(train.validation_trials);
    t["max_skip_ratio"] = format_double(train.max_skip_ratio);
    auto& sm = s["sampler"];
    sm["unlabeled"] = std::to_string(train.sampler.unlabeled);
    sm["unlabeled_total"] = bool_str(train.sampler.unlabeled_total);
    sm["cap_unlabeled"] = bool_str(train.sampler.cap_unlabeled);
    sm["regression_labeled"] = std::to_string(train.sampler.regression_labeled);
    sm["regression_unlabeled"] = std::to_string(train.sampler.regression_unlabeled);
    auto& e = s["eval"];
    e["shots"] = join(eval.shots);
    e["trials"] = std::to_string(eval.trials);
    e["seed"] = std::to_string(eval.seed);
    return s;
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, kv] : to_sections()) {
        out << (first ? "" : "\n") << '[' << section << "]\n";
        for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
        first = false;
    }
    return out.str();
}

void set_field(RunConfig& cfg, const std::string& dotted, const std::string& raw) {
    const auto dot = dotted.find('.');
    if (dot == std::string::npos) throw InvalidConfig("config key '" + dotted + "' must be section.key");
    const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
    const std::string value = detail::trim(raw);
    auto& t = cfg.train;
    if (section == "data" && key == "corpus") cfg.corpus = value;
    else if (section == "output" && key == "dir") cfg.output_dir = value;
    else if (section == "model") {
        auto kv = cfg.model.to_map();
        if (!kv.count(key)) throw InvalidConfig("unknown config key '" + dotted + "'");
        kv[key] = value;
        cfg.model = ModelConfig::from_map(kv);
    } else if (section == "train") {
        if (key == "learning_rate") t.learning_rate = to_double(dotted, value);
        else if (key == "episodes_per_step") t.episodes_per_step = to_size(dotted, value);
        else if (key == "max_epochs") t.max_epochs = to_size(dotted, value);
        else if (key == "validation_interval") t.validation_interval = to_size(dotted, value);
        else if (key == "patience") t.patience = to_size(dotted, value);
        else if (key == "seed") t.seed = to_u64(dotted, value);
        else if (key == "head") t.head = parse_head_kind(value);
        else if (key == "clip_norm") t.clip_norm = to_double(dotted, value);
        else if (key == "shots") t.train_shots = parse_size_list(dotted, value);
        else if (key == "validation_trials") t.validation_trials = to_size(dotted, value);
        else if (key == "max_skip_ratio") t.max_skip_ratio = to_double(dotted, value);
        else throw InvalidConfig("unknown config key '" + dotted + "'");
    } else if (section == "sampler") {
        auto& s = t.sampler;
        if (key == "unlabeled") s.unlabeled = to_size(dotted, value);
        else if (key == "unlabeled_total") s.unlabeled_total = to_bool(dotted, value);
        else if (key == "cap_unlabeled") s.cap_unlabeled = to_bool(dotted, value);
        else if (key == "regression_labeled") s.regression_labeled = to_size(dotted, value);
        else if (key == "regression_unlabeled") s.regression_unlabeled = to_size(dotted, value);
        else throw InvalidConfig("unknown config key '" + dotted + "'");
    } else if (section == "eval") {
        if (key == "shots") cfg.eval.shots = parse_size_list(dotted, value);
        else if (key == "trials") cfg.eval.trials = to_size(dotted, value);
        else if (key == "seed") cfg.eval.seed = to_u64(dotted, value);
        else throw InvalidConfig("unknown config key '" + dotted + "'");
    } else {
        throw InvalidConfig("unknown config key '" + dotted + "'");
    }
}

RunConfig parse_run_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw InvalidConfig(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    RunConfig cfg;
    for (const auto& [section, node] : tree) {
        if (node.empty() && !node.data().empty()) throw InvalidConfig("config key '" + section + "' is outside any section");
        for (const auto& [key, leaf] : node) set_field(cfg, section + "." + key, leaf.data());
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

} // namespace hsml
