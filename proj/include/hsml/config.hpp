#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hsml/model.hpp"
#include "hsml/trainer.hpp"

namespace hsml {

struct EvalConfig {
    std::vector<std::size_t> shots = {1, 3, 5};
    std::size_t trials = 20;
    std::uint64_t seed = 0;
};

/// Everything a run needs, read from one sectioned key = value document:
/// [data] corpus, [output] dir, [model], [train], [sampler], [eval].
struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path output_dir;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;

    void validate() const;

    /// section -> key -> value, with every field present.
    std::map<std::string, std::map<std::string, std::string>> to_sections() const;
    std::string to_text() const;
};

/// Applies "section.key" = value. Throws InvalidConfig naming the field on an
/// unknown key or a malformed value.
void set_field(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::vector<std::size_t> parse_size_list(const std::string& field, const std::string& text);

} // namespace hsml
