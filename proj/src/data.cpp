#include "hsml/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hsml/error.hpp"
#include "text_util.hpp"

namespace hsml {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// ---- TaskDataset -----------------------------------------------------------

std::vector<std::size_t> TaskDataset::classes() const {
    if (kind != TaskKind::classification) throw InvalidConfig("dataset '" + name + "' is not a classification task");
    std::vector<std::size_t> out(y.rows);
    for (std::size_t i = 0; i < y.rows; ++i) out[i] = one_hot_index(y, i);
    return out;
}

std::vector<std::size_t> TaskDataset::class_counts() const {
    std::vector<std::size_t> counts(num_targets(), 0);
    for (auto c : classes()) ++counts[c];
    return counts;
}

void TaskDataset::validate() const {
    if (x.rows == 0 || x.cols == 0 || y.cols == 0) throw InvalidEpisode("dataset '" + name + "' is empty");
    if (y.rows != x.rows) throw InvalidEpisode("dataset '" + name + "': label rows do not match attribute rows");
    if (attribute_names.size() != x.cols || target_names.size() != y.cols)
        throw InvalidEpisode("dataset '" + name + "': column names do not match the data");
    for (const auto* m : {&x, &y})
        for (double v : m->data)
            if (!std::isfinite(v)) throw InvalidValue("dataset '" + name + "' contains a non-finite value");
    if (kind == TaskKind::classification)
        for (auto c : class_counts())
            if (c == 0) throw InvalidEpisode("dataset '" + name + "' has a class without examples");
}

// ---- generators ------------------------------------------------------------

namespace {

void check_attribute_count(std::size_t m) {
    if (m < kMinSyntheticAttributes || m > kMaxSyntheticAttributes)
        throw InvalidConfig("synthetic tasks need 2..10 attributes, got " + std::to_string(m));
}

std::vector<std::string> attribute_names(std::size_t m) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < m; ++j) names.push_back("a" + std::to_string(j));
    return names;
}

// Places the 2-D signal at two random columns among m, filling the rest with
// standard normal noise. Rows are shuffled.
TaskDataset embed_signal(std::string name, const std::vector<std::array<double, 2>>& points,
                         const std::vector<std::size_t>& labels, std::size_t num_classes, std::size_t m,
                         std::mt19937_64& rng) {
    std::vector<std::size_t> columns(m);
    std::iota(columns.begin(), columns.end(), 0);
    std::shuffle(columns.begin(), columns.end(), rng);
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::normal_distribution<double> noise(0.0, 1.0);
    TaskDataset ds;
    ds.name = std::move(name);
    ds.kind = TaskKind::classification;
    ds.x = Matrix(points.size(), m);
    ds.y = Matrix(points.size(), num_classes);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t src = order[r];
        for (std::size_t j = 0; j < m; ++j) ds.x(r, j) = noise(rng);
        ds.x(r, columns[0]) = points[src][0];
        ds.x(r, columns[1]) = points[src][1];
        ds.y(r, labels[src]) = 1.0;
    }
    ds.attribute_names = attribute_names(m);
    for (std::size_t c = 0; c < num_classes; ++c) ds.target_names.push_back("c" + std::to_string(c));
    ds.provenance["signal_columns"] = std::to_string(columns[0]) + " " + std::to_string(columns[1]);
    return ds;
}

std::size_t per_class(std::size_t examples, std::size_t classes) {
    if (examples < classes || examples % classes != 0)
        throw InvalidConfig("example count " + std::to_string(examples) + " is not a positive multiple of " +
                            std::to_string(classes));
    return examples / classes;
}

} // namespace

TaskDataset generate_circle_task(std::uint64_t seed, std::size_t num_attributes, const GeneratorConfig& cfg) {
    check_attribute_count(num_attributes);
    const std::size_t n_class = per_class(cfg.examples, 2);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::vector<std::array<double, 2>> points;
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < 2; ++c) {
        const double radius = c == 0 ? cfg.inner_radius : cfg.outer_radius;
        for (std::size_t i = 0; i < n_class; ++i) {
            const double theta = angle(rng);
            const double r = radius + cfg.radial_jitter * jitter(rng);
            points.push_back({r * std::cos(theta), r * std::sin(theta)});
            labels.push_back(c);
        }
    }
    auto ds = embed_signal("circle", points, labels, 2, num_attributes, rng);
    ds.provenance["generator"] = "circle";
    ds.provenance["seed"] = std::to_string(seed);
    return ds;
}

TaskDataset generate_spiral_task(std::uint64_t seed, std::size_t num_attributes, const GeneratorConfig& cfg) {
    check_attribute_count(num_attributes);
    const std::size_t n_class = per_class(cfg.examples, kSpiralArms);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> param(cfg.spiral_t_min, cfg.spiral_t_max);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::array<double, 2>> points;
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < kSpiralArms; ++c) {
        for (std::size_t i = 0; i < n_class; ++i) {
            const double t = param(rng);
            const double theta =
                2.0 * std::numbers::pi * t + 2.0 * std::numbers::pi * static_cast<double>(c) / kSpiralArms;
            const double dx = cfg.spiral_noise * noise(rng);
            const double dy = cfg.spiral_noise * noise(rng);
            points.push_back({t * std::cos(theta) + dx, t * std::sin(theta) + dy});
            labels.push_back(c);
        }
    }
    auto ds = embed_signal("spiral", points, labels, kSpiralArms, num_attributes, rng);
    ds.provenance["generator"] = "spiral";
    ds.provenance["seed"] = std::to_string(seed);
    return ds;
}

std::vector<TaskDataset> generate_circle_spiral_corpus(std::uint64_t seed, std::size_t num_tasks,
                                                       const GeneratorConfig& cfg) {
    if (num_tasks < 2) throw InvalidConfig("a corpus needs at least two tasks");
    std::vector<TaskDataset> tasks;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        std::mt19937_64 rng(derive_seed(seed, t));
        const bool circle = std::bernoulli_distribution(0.5)(rng);
        const std::size_t m = std::uniform_int_distribution<std::size_t>(kMinSyntheticAttributes,
                                                                         kMaxSyntheticAttributes)(rng);
        const std::uint64_t task_seed = rng();
        TaskDataset ds = circle ? generate_circle_task(task_seed, m, cfg) : generate_spiral_task(task_seed, m, cfg);
        char buf[32];
        std::snprintf(buf, sizeof buf, "task_%03zu_", t);
        ds.name = buf + ds.name;
        tasks.push_back(std::move(ds));
    }
    return tasks;
}

namespace {

void standardize_columns(Matrix& y, const std::string& what) {
    for (std::size_t c = 0; c < y.cols; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < y.rows; ++i) mean += y(i, c);
        mean /= static_cast<double>(y.rows);
        double var = 0.0;
        for (std::size_t i = 0; i < y.rows; ++i) var += (y(i, c) - mean) * (y(i, c) - mean);
        const double sd = std::sqrt(var / static_cast<double>(y.rows));
        if (!(sd > 0.0)) throw IngestionError(what + ": target column " + std::to_string(c) + " is constant");
        for (std::size_t i = 0; i < y.rows; ++i) y(i, c) = (y(i, c) - mean) / sd;
    }
}

} // namespace

TaskDataset generate_linear_regression_task(std::uint64_t seed, std::size_t num_attributes,
                                            const GeneratorConfig& cfg) {
    check_attribute_count(num_attributes);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::size_t> columns(num_attributes);
    std::iota(columns.begin(), columns.end(), 0);
    std::shuffle(columns.begin(), columns.end(), rng);
    const std::size_t signal = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(3, num_attributes))(rng);
    std::vector<double> weights(signal);
    for (auto& w : weights) w = normal(rng);

    TaskDataset ds;
    ds.name = "linear";
    ds.kind = TaskKind::regression;
    ds.x = Matrix(cfg.examples, num_attributes);
    ds.y = Matrix(cfg.examples, 1);
    for (std::size_t i = 0; i < cfg.examples; ++i) {
        for (std::size_t j = 0; j < num_attributes; ++j) ds.x(i, j) = normal(rng);
        double target = cfg.regression_noise * normal(rng);
        for (std::size_t s = 0; s < signal; ++s) target += weights[s] * ds.x(i, columns[s]);
        ds.y(i, 0) = target;
    }
    standardize_columns(ds.y, "linear regression task");
    ds.attribute_names = attribute_names(num_attributes);
    ds.target_names = {"y"};
    ds.provenance["generator"] = "linear";
    ds.provenance["seed"] = std::to_string(seed);
    std::string used;
    for (std::size_t s = 0; s < signal; ++s) used += (s ? " " : "") + std::to_string(columns[s]);
    ds.provenance["signal_columns"] = used;
    return ds;
}

std::vector<TaskDataset> generate_regression_corpus(std::uint64_t seed, std::size_t num_tasks,
                                                    const GeneratorConfig& cfg) {
    if (num_tasks < 2) throw InvalidConfig("a corpus needs at least two tasks");
    std::vector<TaskDataset> tasks;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        std::mt19937_64 rng(derive_seed(seed, t));
        const std::size_t m = std::uniform_int_distribution<std::size_t>(kMinSyntheticAttributes,
                                                                         kMaxSyntheticAttributes)(rng);
        TaskDataset ds = generate_linear_regression_task(rng(), m, cfg);
        char buf[32];
        std::snprintf(buf, sizeof buf, "task_%03zu_", t);
        ds.name = buf + ds.name;
        tasks.push_back(std::move(ds));
    }
    return tasks;
}

// ---- tabular ingestion -----------------------------------------------------

namespace {

bool is_missing(const std::string& v) {
    if (v.empty() || v == "?") return true;
    std::string lower;
    for (char ch : v) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    return lower == "na" || lower == "nan" || lower == "null";
}

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

RawTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path.string());
    RawTable t;
    std::string line;
    if (!std::getline(in, line)) throw IngestionError(path.string() + ": missing header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3); // UTF-8 BOM
    t.header = detail::split_csv_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != t.header.size())
            throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                 std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    if (t.rows.empty()) throw IngestionError(path.string() + ": no data rows");
    return t;
}

struct Column {
    std::string name;
    std::vector<double> values;
};

// Numeric column -> mean imputation; otherwise categorical -> mode
// imputation and one-hot expansion (categories in sorted order).
std::vector<Column> encode_attribute(const std::string& name, const std::vector<std::string>& raw) {
    std::vector<std::optional<double>> parsed;
    bool numeric = true;
    std::size_t present = 0;
    for (const auto& v : raw) {
        if (is_missing(v)) {
            parsed.emplace_back();
            continue;
        }
        ++present;
        auto d = detail::parse_double(v);
        if (!d || !std::isfinite(*d)) numeric = false;
        parsed.push_back(d);
    }
    if (present == 0) throw IngestionError("attribute column '" + name + "' has no values");
    if (numeric) {
        double mean = 0.0;
        for (const auto& p : parsed)
            if (p) mean += *p;
        mean /= static_cast<double>(present);
        Column col{name, {}};
        for (const auto& p : parsed) col.values.push_back(p ? *p : mean);
        return {col};
    }
    std::map<std::string, std::size_t> freq;
    for (const auto& v : raw)
        if (!is_missing(v)) ++freq[v];
    std::string mode = freq.begin()->first;
    for (const auto& [k, n] : freq)
        if (n > freq[mode]) mode = k;
    std::vector<Column> cols;
    for (const auto& [category, n] : freq) {
        Column col{name + "=" + category, {}};
        for (const auto& v : raw) col.values.push_back((is_missing(v) ? mode : v) == category ? 1.0 : 0.0);
        cols.push_back(std::move(col));
    }
    return cols;
}

void min_max_scale(std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double low = *lo, range = *hi - *lo;
    for (auto& x : v) x = range > 0.0 ? (x - low) / range : 0.0;
}

} // namespace

TaskDataset ingest_tabular(const fs::path& path, const std::string& target_column, TaskKind kind) {
    RawTable table = read_csv(path);
    const auto target_it = std::find(table.header.begin(), table.header.end(), target_column);
    if (target_it == table.header.end())
        throw IngestionError(path.string() + ": target column '" + target_column + "' not found");
    const std::size_t target_idx = static_cast<std::size_t>(target_it - table.header.begin());
    if (table.header.size() < 2) throw IngestionError(path.string() + ": no attribute columns");

    // Rows without a target value carry no supervision and are dropped.
    std::vector<std::vector<std::string>> rows;
    for (auto& r : table.rows)
        if (!is_missing(r[target_idx])) rows.push_back(std::move(r));
    if (rows.empty()) throw IngestionError(path.string() + ": target column '" + target_column + "' has no values");

    TaskDataset ds;
    ds.name = path.stem().string();
    ds.kind = kind;
    std::vector<Column> attrs;
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (j == target_idx) continue;
        std::vector<std::string> raw;
        for (const auto& r : rows) raw.push_back(r[j]);
        for (auto& col : encode_attribute(table.header[j], raw)) {
            min_max_scale(col.values);
            attrs.push_back(std::move(col));
        }
    }
    const std::size_t n = rows.size();
    ds.x = Matrix(n, attrs.size());
    for (std::size_t j = 0; j < attrs.size(); ++j) {
        ds.attribute_names.push_back(attrs[j].name);
        for (std::size_t i = 0; i < n; ++i) ds.x(i, j) = attrs[j].values[i];
    }

    if (kind == TaskKind::classification) {
        std::set<std::string> names;
        for (const auto& r : rows) names.insert(r[target_idx]);
        ds.target_names.assign(names.begin(), names.end());
        ds.y = Matrix(n, names.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto pos = std::distance(names.begin(), names.find(rows[i][target_idx]));
            ds.y(i, static_cast<std::size_t>(pos)) = 1.0;
        }
    } else {
        ds.target_names = {target_column};
        ds.y = Matrix(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
            auto v = detail::parse_double(rows[i][target_idx]);
            if (!v || !std::isfinite(*v))
                throw IngestionError(path.string() + ": target column '" + target_column + "' has non-numeric value '" +
                                     rows[i][target_idx] + "'");
            ds.y(i, 0) = *v;
        }
        standardize_columns(ds.y, path.string());
    }
    ds.provenance["source"] = path.filename().string();
    ds.provenance["target_column"] = target_column;
    ds.validate();
    return ds;
}

// ---- canonical form --------------------------------------------------------

void write_dataset(const TaskDataset& ds, const fs::path& dir) {
    ds.validate();
    fs::create_directories(dir);
    const fs::path csv = dir / (ds.name + ".csv");
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw IoError("cannot write " + csv.string());
    const bool cls = ds.kind == TaskKind::classification;
    for (std::size_t j = 0; j < ds.attribute_names.size(); ++j) out << (j ? "," : "") << detail::csv_escape(ds.attribute_names[j]);
    if (cls) out << ",label";
    else
        for (const auto& t : ds.target_names) out << ',' << detail::csv_escape(t);
    out << '\n';
    const auto labels = cls ? ds.classes() : std::vector<std::size_t>{};
    for (std::size_t i = 0; i < ds.num_examples(); ++i) {
        for (std::size_t j = 0; j < ds.num_attributes(); ++j) out << (j ? "," : "") << detail::format_double(ds.x(i, j));
        if (cls) out << ',' << detail::csv_escape(ds.target_names[labels[i]]);
        else
            for (std::size_t c = 0; c < ds.num_targets(); ++c) out << ',' << detail::format_double(ds.y(i, c));
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + csv.string());

    pt::ptree meta;
    meta.put("format", "hsml-dataset");
    meta.put("version", 1);
    meta.put("name", ds.name);
    meta.put("kind", to_string(ds.kind));
    meta.put("examples", ds.num_examples());
    meta.put("attributes", ds.num_attributes());
    meta.put("targets", ds.num_targets());
    for (std::size_t c = 0; c < ds.target_names.size(); ++c)
        meta.push_back({"target." + std::to_string(c), pt::ptree(ds.target_names[c])});
    for (const auto& [k, v] : ds.provenance) meta.push_back({"provenance." + k, pt::ptree(v)});
    const fs::path meta_path = dir / (ds.name + ".meta");
    try {
        pt::write_ini(meta_path.string(), meta);
    } catch (const pt::ini_parser_error& e) {
        throw IoError(std::string("cannot write ") + meta_path.string() + ": " + e.what());
    }
}

TaskDataset read_dataset(const fs::path& csv_path) {
    fs::path meta_path = csv_path;
    meta_path.replace_extension(".meta");
    pt::ptree meta;
    try {
        pt::read_ini(meta_path.string(), meta);
    } catch (const pt::ini_parser_error& e) {
        throw IngestionError(std::string("cannot read metadata ") + meta_path.string() + ": " + e.what());
    }
    auto get = [&](const std::string& key) {
        auto it = meta.find(key);
        if (it == meta.not_found()) throw IngestionError(meta_path.string() + ": missing key '" + key + "'");
        return it->second.data();
    };
    if (get("format") != "hsml-dataset") throw IngestionError(meta_path.string() + ": not a dataset sidecar");
    TaskDataset ds;
    ds.name = get("name");
    ds.kind = parse_task_kind(get("kind"));
    const std::size_t n = std::stoul(get("examples")), m = std::stoul(get("attributes")), c = std::stoul(get("targets"));
    for (std::size_t k = 0; k < c; ++k) ds.target_names.push_back(get("target." + std::to_string(k)));
    for (const auto& [key, node] : meta)
        if (key.rfind("provenance.", 0) == 0) ds.provenance[key.substr(11)] = node.data();

    RawTable table = read_csv(csv_path);
    const bool cls = ds.kind == TaskKind::classification;
    const std::size_t expected_cols = m + (cls ? 1 : c);
    if (table.header.size() != expected_cols || table.rows.size() != n)
        throw IngestionError(csv_path.string() + ": table shape does not match its metadata");
    ds.attribute_names.assign(table.header.begin(), table.header.begin() + static_cast<std::ptrdiff_t>(m));
    ds.x = Matrix(n, m);
    ds.y = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            auto v = detail::parse_double(table.rows[i][j]);
            if (!v) throw IngestionError(csv_path.string() + ": non-numeric attribute in row " + std::to_string(i + 1));
            ds.x(i, j) = *v;
        }
        if (cls) {
            const auto it = std::find(ds.target_names.begin(), ds.target_names.end(), table.rows[i][m]);
            if (it == ds.target_names.end())
                throw IngestionError(csv_path.string() + ": unknown class '" + table.rows[i][m] + "'");
            ds.y(i, static_cast<std::size_t>(it - ds.target_names.begin())) = 1.0;
        } else {
            for (std::size_t k = 0; k < c; ++k) {
                auto v = detail::parse_double(table.rows[i][m + k]);
                if (!v) throw IngestionError(csv_path.string() + ": non-numeric target in row " + std::to_string(i + 1));
                ds.y(i, k) = *v;
            }
        }
    }
    ds.validate();
    return ds;
}

// ---- corpus ----------------------------------------------------------------

CorpusSplit split_corpus(std::vector<TaskDataset> tasks, std::uint64_t seed, double train_fraction,
                         double validation_fraction) {
    if (tasks.size() < 2) throw InvalidConfig("a corpus split needs at least two tasks");
    if (train_fraction <= 0.0 || validation_fraction < 0.0 || train_fraction + validation_fraction >= 1.0)
        throw InvalidConfig("split fractions must satisfy 0 < train, 0 <= validation, train + validation < 1");
    const std::size_t n = tasks.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(train_fraction * n)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * n));
    n_train = std::min(n_train, n - 1);
    n_val = std::min(n_val, n - n_train - 1);
    CorpusSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
        dst.push_back(std::move(tasks[order[i]]));
    }
    return split;
}

namespace {

std::string join_names(const std::vector<TaskDataset>& tasks) {
    std::string out;
    for (const auto& t : tasks) out += (out.empty() ? "" : ",") + t.name;
    return out;
}

} // namespace

void write_corpus(const CorpusSplit& split, const fs::path& dir) {
    fs::create_directories(dir);
    for (const auto* part : {&split.train, &split.validation, &split.test})
        for (const auto& ds : *part) write_dataset(ds, dir);
    pt::ptree manifest;
    manifest.put("corpus.format", "hsml-corpus");
    manifest.put("corpus.version", 1);
    manifest.put("corpus.split_seed", split.seed);
    manifest.put("split.train", join_names(split.train));
    manifest.put("split.validation", join_names(split.validation));
    manifest.put("split.test", join_names(split.test));
    try {
        pt::write_ini((dir / "manifest.ini").string(), manifest);
    } catch (const pt::ini_parser_error& e) {
        throw IoError(std::string("cannot write manifest: ") + e.what());
    }
}

CorpusSplit read_corpus(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.ini";
    if (!fs::exists(manifest_path)) throw IngestionError("corpus manifest not found: " + manifest_path.string());
    pt::ptree manifest;
    try {
        pt::read_ini(manifest_path.string(), manifest);
    } catch (const pt::ini_parser_error& e) {
        throw IngestionError(std::string("cannot read manifest: ") + e.what());
    }
    if (manifest.get<std::string>("corpus.format", "") != "hsml-corpus")
        throw IngestionError(manifest_path.string() + ": not a corpus manifest");
    CorpusSplit split;
    split.seed = manifest.get<std::uint64_t>("corpus.split_seed", 0);
    auto load = [&](const std::string& key, std::vector<TaskDataset>& dst) {
        std::stringstream ss(manifest.get<std::string>("split." + key, ""));
        std::string name;
        while (std::getline(ss, name, ','))
            if (!name.empty()) dst.push_back(read_dataset(dir / (name + ".csv")));
    };
    load("train", split.train);
    load("validation", split.validation);
    load("test", split.test);
    return split;
}

// ---- episode sampling ------------------------------------------------------

void SamplerConfig::validate() const {
    if (shots == 0) throw InvalidConfig("sampler.shots must be >= 1");
    if (unlabeled == 0) throw InvalidConfig("sampler.unlabeled must be >= 1");
    if (regression_labeled == 0 || regression_unlabeled == 0)
        throw InvalidConfig("sampler regression sizes must be >= 1");
}

bool sampleable(const TaskDataset& ds, const SamplerConfig& cfg) {
    if (ds.kind == TaskKind::regression) return ds.num_examples() >= cfg.regression_labeled + cfg.regression_unlabeled;
    const auto counts = ds.class_counts();
    if (cfg.unlabeled_total) {
        std::size_t spare = 0;
        for (auto n : counts) {
            if (n < cfg.shots) return false;
            spare += n - cfg.shots;
        }
        return spare >= (cfg.cap_unlabeled ? 1 : cfg.unlabeled);
    }
    const std::size_t need = cfg.shots + (cfg.cap_unlabeled ? 1 : cfg.unlabeled);
    return std::all_of(counts.begin(), counts.end(), [&](std::size_t n) { return n >= need; });
}

std::optional<Episode> sample_episode(const TaskDataset& ds, const SamplerConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    if (!sampleable(ds, cfg)) return std::nullopt;
    std::vector<std::size_t> labeled, unlabeled;
    if (ds.kind == TaskKind::regression) {
        std::vector<std::size_t> idx(ds.num_examples());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        labeled.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg.regression_labeled));
        unlabeled.assign(idx.begin() + static_cast<std::ptrdiff_t>(cfg.regression_labeled),
                         idx.begin() + static_cast<std::ptrdiff_t>(cfg.regression_labeled + cfg.regression_unlabeled));
    } else {
        const auto classes = ds.classes();
        std::vector<std::vector<std::size_t>> by_class(ds.num_targets());
        for (std::size_t i = 0; i < classes.size(); ++i) by_class[classes[i]].push_back(i);
        std::vector<std::size_t> pool;
        for (auto& members : by_class) {
            std::shuffle(members.begin(), members.end(), rng);
            labeled.insert(labeled.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(cfg.shots));
            const std::size_t rest = members.size() - cfg.shots;
            if (cfg.unlabeled_total) {
                pool.insert(pool.end(), members.begin() + static_cast<std::ptrdiff_t>(cfg.shots), members.end());
            } else {
                const std::size_t take = std::min(cfg.unlabeled, rest);
                unlabeled.insert(unlabeled.end(), members.begin() + static_cast<std::ptrdiff_t>(cfg.shots),
                                 members.begin() + static_cast<std::ptrdiff_t>(cfg.shots + take));
            }
        }
        if (cfg.unlabeled_total) {
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(std::min(cfg.unlabeled, pool.size()));
            unlabeled = std::move(pool);
        }
        std::shuffle(labeled.begin(), labeled.end(), rng);
        std::shuffle(unlabeled.begin(), unlabeled.end(), rng);
    }
    Episode ep;
    ep.kind = ds.kind;
    ep.x_labeled = ds.x.select_rows(labeled);
    ep.y_labeled = ds.y.select_rows(labeled);
    ep.x_unlabeled = ds.x.select_rows(unlabeled);
    ep.y_unlabeled = ds.y.select_rows(unlabeled);
    return ep;
}

} // namespace hsml
