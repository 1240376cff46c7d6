#include "sthd/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sthd/optim.hpp"
#include "sthd/reindex.hpp"

namespace sthd {

using nlohmann::json;

AblationMode parse_ablation_mode(std::string_view name) {
    if (name == "related") return AblationMode::related;
    if (name == "unrelated") return AblationMode::unrelated;
    if (name == "none") return AblationMode::none;
    if (name == "reindex_off") return AblationMode::reindex_off;
    throw std::invalid_argument("unknown ablation mode '" + std::string(name) +
                                "' (expected related|unrelated|none|reindex_off)");
}

std::string_view to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::related: return "related";
        case AblationMode::unrelated: return "unrelated";
        case AblationMode::none: return "none";
        case AblationMode::reindex_off: return "reindex_off";
    }
    return "related";
}

EarlyStopMode parse_early_stop_mode(std::string_view name) {
    if (name == "previous") return EarlyStopMode::previous;
    if (name == "best") return EarlyStopMode::best;
    throw std::invalid_argument("unknown early_stop_mode '" + std::string(name) + "' (expected previous|best)");
}

std::string_view to_string(EarlyStopMode mode) { return mode == EarlyStopMode::best ? "best" : "previous"; }

LrSchedule parse_lr_schedule(std::string_view name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "cosine") return LrSchedule::cosine;
    throw std::invalid_argument("unknown lr_schedule '" + std::string(name) + "' (expected constant|cosine)");
}

std::string_view to_string(LrSchedule schedule) { return schedule == LrSchedule::cosine ? "cosine" : "constant"; }

// ---------------------------------------------------------------------------
// Config keys

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(std::string_view key, std::string_view value) {
    const std::string v = trim(value);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
        throw std::invalid_argument("config key '" + std::string(key) + "': '" + v +
                                    "' is not a non-negative integer");
    }
    return out;
}

std::size_t to_size(std::string_view key, std::string_view value) {
    return static_cast<std::size_t>(to_u64(key, value));
}

double to_double(std::string_view key, std::string_view value) {
    const std::string v = trim(value);
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
        throw std::invalid_argument("config key '" + std::string(key) + "': '" + v + "' is not a finite number");
    }
    return out;
}

bool to_bool(std::string_view key, std::string_view value) {
    const std::string v = trim(value);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config key '" + std::string(key) + "': '" + v + "' is not a boolean");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::vector<std::uint64_t> to_seed_list(std::string_view key, std::string_view value) {
    std::vector<std::uint64_t> out;
    std::string v(value);
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(to_u64(key, item));
    if (out.empty()) throw std::invalid_argument("config key 'seeds' needs at least one seed");
    return out;
}

struct Field {
    std::string name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
    bool hashed = true;
};

#define STHD_SIZE_FIELD(key, member) \
    Field{key, [](ExperimentConfig& c, std::string_view v) { c.member = to_size(key, v); }, \
          [](const ExperimentConfig& c) { return std::to_string(c.member); }}
#define STHD_DOUBLE_FIELD(key, member) \
    Field{key, [](ExperimentConfig& c, std::string_view v) { c.member = to_double(key, v); }, \
          [](const ExperimentConfig& c) { return fmt_double(c.member); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"dataset", [](ExperimentConfig& c, std::string_view v) { c.dataset_name = trim(v); },
              [](const ExperimentConfig& c) { return c.dataset_name; }},
        Field{"data_path", [](ExperimentConfig& c, std::string_view v) { c.data_path = trim(v); },
              [](const ExperimentConfig& c) { return c.data_path; }},
        STHD_DOUBLE_FIELD("train_fraction", train_fraction),
        STHD_DOUBLE_FIELD("val_fraction", val_fraction),
        STHD_SIZE_FIELD("synthetic.channels", synthetic.num_channels),
        STHD_SIZE_FIELD("synthetic.steps", synthetic.num_steps),
        STHD_SIZE_FIELD("synthetic.groups", synthetic.num_groups),
        STHD_DOUBLE_FIELD("synthetic.coupling", synthetic.intra_group_coupling),
        STHD_DOUBLE_FIELD("synthetic.noise", synthetic.noise_std),
        STHD_SIZE_FIELD("synthetic.lag", synthetic.lag),
        Field{"synthetic.seed", [](ExperimentConfig& c, std::string_view v) { c.synthetic.seed = to_u64("synthetic.seed", v); },
              [](const ExperimentConfig& c) { return std::to_string(c.synthetic.seed); }},
        Field{"synthetic.seed_from_run",
              [](ExperimentConfig& c, std::string_view v) { c.synthetic_seed_from_run = to_bool("synthetic.seed_from_run", v); },
              [](const ExperimentConfig& c) { return fmt_bool(c.synthetic_seed_from_run); }},
        STHD_SIZE_FIELD("input_length", window.input_length),
        STHD_SIZE_FIELD("horizon", window.horizon),
        STHD_SIZE_FIELD("window_stride", window.stride),
        STHD_SIZE_FIELD("k", k),
        Field{"score_mode", [](ExperimentConfig& c, std::string_view v) { c.score_mode = parse_score_mode(trim(v)); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.score_mode)); }},
        Field{"ablation", [](ExperimentConfig& c, std::string_view v) { c.ablation = parse_ablation_mode(trim(v)); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.ablation)); }},
        STHD_SIZE_FIELD("patch_len", model.patch_len),
        STHD_SIZE_FIELD("patch_stride", model.patch_stride),
        STHD_SIZE_FIELD("d_model", model.d_model),
        STHD_SIZE_FIELD("heads", model.heads),
        STHD_SIZE_FIELD("head_dim", model.head_dim),
        STHD_SIZE_FIELD("encoder_layers", model.encoder_layers),
        STHD_SIZE_FIELD("ff_dim", model.ff_dim),
        STHD_SIZE_FIELD("conv_kernel", model.conv_kernel),
        STHD_DOUBLE_FIELD("dropout", model.dropout),
        STHD_SIZE_FIELD("batch_size", batch_size),
        STHD_DOUBLE_FIELD("learning_rate", learning_rate),
        Field{"lr_schedule",
              [](ExperimentConfig& c, std::string_view v) { c.lr_schedule = parse_lr_schedule(trim(v)); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.lr_schedule)); }},
        STHD_SIZE_FIELD("max_epochs", max_epochs),
        STHD_SIZE_FIELD("max_steps", max_steps),
        STHD_DOUBLE_FIELD("early_stop_delta", early_stop_delta),
        STHD_SIZE_FIELD("early_stop_patience", early_stop_patience),
        Field{"early_stop_mode",
              [](ExperimentConfig& c, std::string_view v) { c.early_stop_mode = parse_early_stop_mode(trim(v)); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.early_stop_mode)); }},
        Field{"seeds", [](ExperimentConfig& c, std::string_view v) { c.seeds = to_seed_list("seeds", v); },
              [](const ExperimentConfig& c) {
                  std::string s;
                  for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
                  return s;
              },
              false},
        STHD_SIZE_FIELD("reindex_element_ceiling", reindex_element_ceiling),
        Field{"workers", [](ExperimentConfig& c, std::string_view v) { c.workers = to_size("workers", v); },
              [](const ExperimentConfig& c) { return std::to_string(c.workers); }, false},
        Field{"output_dir", [](ExperimentConfig& c, std::string_view v) { c.output_dir = trim(v); },
              [](const ExperimentConfig& c) { return c.output_dir; }, false},
        Field{"baselines", [](ExperimentConfig& c, std::string_view v) { c.baselines = to_bool("baselines", v); },
              [](const ExperimentConfig& c) { return fmt_bool(c.baselines); }},
        STHD_SIZE_FIELD("linear_epochs", linear_epochs),
        STHD_DOUBLE_FIELD("linear_learning_rate", linear_learning_rate),
    };
    return table;
}

#undef STHD_SIZE_FIELD
#undef STHD_DOUBLE_FIELD

const Field& find_field(std::string_view key) {
    for (const auto& f : fields()) {
        if (f.name == key) return f;
    }
    throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) { find_field(trim(key)).set(*this, value); }

std::string ExperimentConfig::get(std::string_view key) const { return find_field(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.name);
        return out;
    }();
    return names;
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
    return out;
}

std::string ExperimentConfig::hash() const {
    std::string text;
    for (const auto& f : fields()) {
        if (f.hashed) text += f.name + " = " + f.get(*this) + "\n";
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

SthdConfig ExperimentConfig::resolved_model() const {
    SthdConfig m = model;
    m.input_length = window.input_length;
    m.horizon = window.horizon;
    m.k = ablation == AblationMode::none ? 0 : k;
    return m;
}

void ExperimentConfig::validate() const {
    if (window.input_length == 0 || window.horizon == 0 || window.stride == 0) {
        throw std::invalid_argument("input_length, horizon and window_stride must be positive");
    }
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
    if (early_stop_patience == 0) throw std::invalid_argument("early_stop_patience must be positive");
    if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
    resolved_model().validate();
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig config;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            config.set(trim(std::string_view(line).substr(0, eq)), std::string_view(line).substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::size_t resolve_workers(std::size_t configured) {
    if (const char* env = std::getenv("STHD_WORKERS"); env && *env) {
        return std::max<std::size_t>(1, to_size("STHD_WORKERS", env));
    }
    if (configured > 0) return configured;
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Early stopping

EarlyStopper::EarlyStopper(double delta, std::size_t patience, EarlyStopMode mode)
    : delta_(delta), patience_(std::max<std::size_t>(1, patience)), mode_(mode) {}

bool EarlyStopper::observe(double val_loss) {
    ++epochs_seen_;
    if (epochs_seen_ == 1) {
        previous_ = best_ = val_loss;
        return false;
    }
    const double reference = mode_ == EarlyStopMode::previous ? previous_ : best_;
    const double improvement = reference - val_loss;
    previous_ = val_loss;
    best_ = std::min(best_, val_loss);
    stale_ = improvement < delta_ ? stale_ + 1 : 0;
    return stale_ >= patience_;
}

// ---------------------------------------------------------------------------
// Data preparation

MtsDataset load_dataset(const ExperimentConfig& config, std::uint64_t seed) {
    if (!config.data_path.empty()) {
        return load_csv(config.data_path, {config.train_fraction, config.val_fraction});
    }
    SyntheticSpec spec = config.synthetic;
    spec.split_fractions = {config.train_fraction, config.val_fraction};
    if (config.synthetic_seed_from_run) spec.seed = mix_seed(spec.seed, seed);
    return generate_synthetic(spec);
}

PreparedExperiment prepare_experiment(const ExperimentConfig& config, std::uint64_t seed) {
    config.validate();
    MtsDataset dataset = load_dataset(config, seed);
    NormalizationState normalizer = fit_normalizer(dataset);
    const std::size_t M = dataset.num_channels();
    NeighborIndex neighbors;
    if (config.ablation == AblationMode::none || config.k == 0) {
        neighbors = NeighborIndex::empty(M);
    } else {
        if (config.k >= M) {
            throw std::invalid_argument("k = " + std::to_string(config.k) + " must be below the channel count " +
                                        std::to_string(M));
        }
        const auto corr = pearson_matrix(dataset, SplitRange::train, resolve_workers(config.workers));
        neighbors = config.ablation == AblationMode::unrelated ? bottom_k_neighbors(corr, config.k, config.score_mode)
                                                               : top_k_neighbors(corr, config.k, config.score_mode);
    }
    WindowSpec eval_spec = config.window;
    eval_spec.stride = 1;
    return PreparedExperiment{std::move(dataset), std::move(normalizer), std::move(neighbors), config.window,
                              eval_spec, config.ablation};
}

// ---------------------------------------------------------------------------
// Training and evaluation

namespace {

constexpr std::size_t kEvalBatch = 256;

template <typename Visit>
void for_each_eval_batch(const SthdModel& model, const PreparedExperiment& prepared, const WindowSpec& spec,
                         SplitRange range, Visit&& visit) {
    const auto assembler = make_assembler(prepared.dataset, prepared.neighbors, prepared.normalizer, spec);
    const SampleIndex index = build_index(prepared.dataset, spec, range, 0, 0);
    if (index.entries.empty()) {
        throw std::invalid_argument(std::string(to_string(range)) + " split has no complete windows");
    }
    nn::NoGradGuard no_grad;
    std::size_t cursor = 0;
    while (auto batch = next_batch(index, cursor, kEvalBatch, assembler)) {
        visit(*batch, model.forward(batch->inputs));
    }
}

using ParameterSnapshot = std::vector<std::vector<double>>;

ParameterSnapshot snapshot(const std::vector<nn::Tensor>& params) {
    ParameterSnapshot out;
    for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

void restore(std::vector<nn::Tensor>& params, const ParameterSnapshot& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::copy(snap[i].begin(), snap[i].end(), params[i].mutable_data().begin());
    }
}

std::uint64_t model_seed_stream(std::uint64_t seed) { return mix_seed(seed, 0x30DE1); }

}  // namespace

double split_loss(const SthdModel& model, const PreparedExperiment& prepared, SplitRange range) {
    double sum = 0.0;
    std::size_t count = 0;
    const auto accumulate = [&](const Batch& batch, const nn::Tensor& pred) {
        const auto p = pred.data();
        const auto y = batch.targets.data();
        for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] - y[i]) * (p[i] - y[i]);
        count += p.size();
    };
    for_each_eval_batch(model, prepared, prepared.train_spec, range, accumulate);
    return sum / static_cast<double>(count);
}

ForecastSet forecast_split(const SthdModel& model, const PreparedExperiment& prepared, SplitRange range) {
    const std::size_t tau = prepared.eval_spec.horizon;
    const std::size_t L = prepared.eval_spec.input_length;
    ForecastSet fs(tau);
    std::vector<double> pred(tau), truth(tau);
    for_each_eval_batch(model, prepared, prepared.eval_spec, range, [&](const Batch& batch, const nn::Tensor& out) {
        const auto p = out.data();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& ref = batch.provenance[i];
            const auto series = prepared.dataset.channel(ref.channel);
            for (std::size_t h = 0; h < tau; ++h) {
                pred[h] = prepared.normalizer.denormalize(ref.channel, p[i * tau + h]);
                truth[h] = series[ref.start + L + h];
            }
            fs.add(ref, pred, truth);
        }
    });
    return fs;
}

TrainOutcome train_model(const ExperimentConfig& config, const PreparedExperiment& prepared, std::uint64_t seed,
                         const TrainHooks& hooks) {
    SthdConfig model_config = config.resolved_model();
    model_config.k = prepared.k();
    TrainOutcome out;
    out.model = std::make_unique<SthdModel>(model_config, model_seed_stream(seed));
    auto params = out.model->parameter_tensors();
    nn::Adam adam(params, config.learning_rate);
    Rng dropout_rng(mix_seed(seed, 0xD209));
    Rng* dropout = model_config.dropout > 0.0 ? &dropout_rng : nullptr;

    const auto assembler = make_assembler(prepared.dataset, prepared.neighbors, prepared.normalizer,
                                          prepared.train_spec);
    const bool legacy = prepared.mode == AblationMode::reindex_off;
    if (legacy) {
        const std::size_t elements = legacy_batch_elements(prepared.dataset.num_channels(), config.batch_size,
                                                           prepared.k(), prepared.train_spec.input_length);
        if (elements > config.reindex_element_ceiling) {
            throw std::runtime_error("reindex_off refused: one batch would hold " + std::to_string(elements) +
                                     " elements, above reindex_element_ceiling = " +
                                     std::to_string(config.reindex_element_ceiling));
        }
    }

    std::size_t schedule_steps = 0;
    if (config.lr_schedule == LrSchedule::cosine) {
        const std::size_t per_channel = windows_per_channel(prepared.dataset.train_end(), prepared.train_spec);
        const std::size_t samples = legacy ? per_channel : per_channel * prepared.dataset.num_channels();
        schedule_steps = config.max_epochs * ((samples + config.batch_size - 1) / config.batch_size);
        if (config.max_steps > 0) schedule_steps = std::min(schedule_steps, config.max_steps);
    }

    EarlyStopper stopper(config.early_stop_delta, config.early_stop_patience, config.early_stop_mode);
    ParameterSnapshot best;
    out.best_val_loss = std::numeric_limits<double>::infinity();
    out.stop_reason = "max_epochs";
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t sample_count = 0;
        bool step_cap = false;
        auto train_on = [&](const Batch& batch) {
            if (schedule_steps > 0) {
                const double progress = static_cast<double>(out.steps) / static_cast<double>(schedule_steps);
                adam.set_learning_rate(0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * progress)));
            }
            adam.zero_grad();
            const auto loss = out.model->forward_loss(batch, dropout);
            if (!std::isfinite(loss.item())) {
                throw std::runtime_error("training diverged: loss is " + std::to_string(loss.item()) +
                                         " at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(out.steps + 1));
            }
            loss.backward();
            adam.step();
            ++out.steps;
            loss_sum += loss.item() * static_cast<double>(batch.size());
            sample_count += batch.size();
            step_cap = config.max_steps > 0 && out.steps >= config.max_steps;
        };
        std::size_t cursor = 0;
        if (legacy) {
            const auto index = build_legacy_index(prepared.dataset, prepared.train_spec, SplitRange::train, seed, epoch);
            while (!step_cap) {
                auto batch = next_legacy_batch(index, cursor, config.batch_size, assembler);
                if (!batch) break;
                train_on(*batch);
            }
        } else {
            const auto index = build_index(prepared.dataset, prepared.train_spec, SplitRange::train, seed, epoch);
            while (!step_cap) {
                auto batch = next_batch(index, cursor, config.batch_size, assembler);
                if (!batch) break;
                train_on(*batch);
            }
        }
        if (sample_count == 0) throw std::invalid_argument("train split has no complete windows");

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(sample_count);
        entry.val_loss = split_loss(*out.model, prepared, SplitRange::val);
        if (hooks.val_loss_override) entry.val_loss = hooks.val_loss_override(epoch, entry.val_loss);
        entry.steps = out.steps;
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!std::isfinite(entry.val_loss)) {
            throw std::runtime_error("training diverged: validation loss is not finite at epoch " +
                                     std::to_string(epoch));
        }
        out.log.push_back(entry);
        if (hooks.on_epoch) hooks.on_epoch(entry, *out.model);

        if (entry.val_loss < out.best_val_loss) {
            out.best_val_loss = entry.val_loss;
            out.best_epoch = epoch;
            best = snapshot(params);
        }
        if (stopper.observe(entry.val_loss)) {
            out.stopped_early = true;
            out.stop_reason = "early_stop";
            break;
        }
        if (step_cap) {
            out.stop_reason = "max_steps";
            break;
        }
    }
    restore(params, best);
    return out;
}

std::filesystem::path checkpoint_stem(const ExperimentConfig& config, std::uint64_t seed) {
    return std::filesystem::path(config.output_dir) / ("sthd_" + config.hash() + "_seed" + std::to_string(seed));
}

namespace {

json metric_record(const ExperimentConfig& config, std::string_view model, std::string_view mode, std::size_t k,
                   std::uint64_t seed, const MetricSummary& m, double wall_time) {
    json r;
    r["dataset"] = config.dataset_name;
    r["model"] = model;
    r["mode"] = mode;
    r["horizon"] = config.window.horizon;
    r["K"] = k;
    r["seed"] = seed;
    r["rmse"] = m.rmse;
    r["wrmspe"] = m.wrmspe;
    r["mae"] = m.mae;
    r["wape"] = m.wape;
    r["wall_time"] = wall_time;
    r["config_hash"] = config.hash();
    return r;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RunResult run_training(const ExperimentConfig& config, std::uint64_t seed, const TrainHooks& hooks) {
    const auto t0 = std::chrono::steady_clock::now();
    const PreparedExperiment prepared = prepare_experiment(config, seed);
    RunResult result;
    result.outcome = train_model(config, prepared, seed, hooks);
    const auto& model = *result.outcome.model;

    if (!config.output_dir.empty()) {
        std::filesystem::create_directories(config.output_dir);
        auto meta = model.config().to_metadata();
        meta["config_hash"] = config.hash();
        meta["seed"] = std::to_string(seed);
        meta["best_epoch"] = std::to_string(result.outcome.best_epoch);
        nn::save_checkpoint(checkpoint_stem(config, seed), model.parameters(), meta);
    }

    result.test = summarize(forecast_split(model, prepared, SplitRange::test));
    json record = metric_record(config, "STHD", to_string(config.ablation), prepared.k(), seed, result.test,
                                seconds_since(t0));
    record["best_epoch"] = result.outcome.best_epoch;
    record["epochs_run"] = result.outcome.log.size();
    record["steps"] = result.outcome.steps;
    record["stop_reason"] = result.outcome.stop_reason;
    json log = json::array();
    for (const auto& e : result.outcome.log) {
        log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"steps", e.steps}});
    }
    record["epochs"] = std::move(log);
    result.records.push_back(std::move(record));

    if (config.baselines) {
        const auto tn = std::chrono::steady_clock::now();
        if (auto naive = naive_forecast(prepared.dataset, prepared.eval_spec, SplitRange::test)) {
            result.records.push_back(
                metric_record(config, "Naive", "none", 0, seed, summarize(*naive), seconds_since(tn)));
        }
        const auto tl = std::chrono::steady_clock::now();
        LinearTrainOptions options;
        options.epochs = config.linear_epochs;
        options.batch_size = config.batch_size;
        options.learning_rate = config.linear_learning_rate;
        options.seed = seed;
        const auto linear = linear_forecast(prepared.dataset, prepared.train_spec, options, SplitRange::test);
        result.records.push_back(
            metric_record(config, "Linear", "none", 0, seed, summarize(linear), seconds_since(tl)));
    }
    return result;
}

json make_report(const ExperimentConfig& config, std::string_view kind, std::vector<json> records) {
    json report;
    report["schema_version"] = report_schema_version;
    report["kind"] = kind;
    report["config_hash"] = config.hash();
    report["records"] = std::move(records);
    return report;
}

json train_report(const ExperimentConfig& config) {
    std::vector<json> records;
    for (auto seed : config.seeds) {
        auto run = run_training(config, seed);
        for (auto& r : run.records) records.push_back(std::move(r));
    }
    return make_report(config, "train", std::move(records));
}

json evaluate_checkpoint(const ExperimentConfig& config, const std::filesystem::path& stem) {
    const auto t0 = std::chrono::steady_clock::now();
    auto manifest_path = stem;
    manifest_path += ".manifest";
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open checkpoint manifest " + manifest_path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const auto meta = nn::parse_manifest_metadata(buf.str());
    const auto seed_it = meta.find("seed");
    const std::uint64_t seed = seed_it == meta.end() ? 0 : std::stoull(seed_it->second);

    const PreparedExperiment prepared = prepare_experiment(config, seed);
    const SthdConfig model_config = SthdConfig::from_metadata(meta);
    if (model_config.k != prepared.k() || model_config.input_length != prepared.eval_spec.input_length ||
        model_config.horizon != prepared.eval_spec.horizon) {
        throw std::runtime_error("checkpoint was trained with K=" + std::to_string(model_config.k) + ", L=" +
                                 std::to_string(model_config.input_length) + ", tau=" +
                                 std::to_string(model_config.horizon) + " which does not match the config");
    }
    SthdModel model(model_config, 0);
    nn::load_checkpoint(stem, model.parameters());
    const auto metrics = summarize(forecast_split(model, prepared, SplitRange::test));
    return make_report(config, "evaluate",
                       {metric_record(config, "STHD", to_string(config.ablation), prepared.k(), seed, metrics,
                                      seconds_since(t0))});
}

json run_ablation(const ExperimentConfig& config, const std::vector<AblationMode>& modes) {
    std::vector<json> records;
    for (auto mode : modes) {
        ExperimentConfig c = config;
        c.ablation = mode;
        for (auto seed : c.seeds) {
            auto run = run_training(c, seed);
            for (auto& r : run.records) records.push_back(std::move(r));
        }
    }
    return make_report(config, "ablation", std::move(records));
}

KSweepResult run_k_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& k_values) {
    KSweepResult result;
    std::vector<json> records;
    std::ostringstream csv;
    csv.precision(17);
    csv << "k,seed,horizon,rmse,wrmspe,mae,wape\n";
    for (auto k : k_values) {
        ExperimentConfig c = config;
        c.k = k;
        c.ablation = k == 0 ? AblationMode::none : AblationMode::related;
        for (auto seed : c.seeds) {
            auto run = run_training(c, seed);
            const auto& m = run.test;
            csv << k << ',' << seed << ',' << c.window.horizon << ',' << m.rmse << ',' << m.wrmspe << ',' << m.mae
                << ',' << m.wape << '\n';
            for (auto& r : run.records) records.push_back(std::move(r));
        }
    }
    result.report = make_report(config, "k_sweep", std::move(records));
    result.csv = csv.str();
    return result;
}

}  // namespace sthd
