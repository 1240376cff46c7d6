#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sthd/experiment.hpp"

namespace sthd {
namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.synthetic.num_channels = 4;
    c.synthetic.num_steps = 200;
    c.synthetic.num_groups = 2;
    c.window = {24, 6, 1};
    c.k = 1;
    c.model.patch_len = 8;
    c.model.patch_stride = 4;
    c.model.d_model = 32;
    c.model.heads = 2;
    c.model.encoder_layers = 1;
    c.model.ff_dim = 64;
    c.batch_size = 32;
    c.max_epochs = 3;
    c.workers = 1;
    return c;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Config, ParsesKeyValueText) {
    const auto c = parse_config(
        "# comment\n"
        "input_length = 32\n"
        "horizon=12\n"
        "\n"
        "seeds = 1, 2,3\n"
        "ablation = unrelated\n"
        "learning_rate = 0.005\n");
    EXPECT_EQ(c.window.input_length, 32u);
    EXPECT_EQ(c.window.horizon, 12u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(c.ablation, AblationMode::unrelated);
    EXPECT_DOUBLE_EQ(c.learning_rate, 0.005);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config("no_such_key = 1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("horizon = many\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("ablation = sometimes\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("just a line\n"), std::invalid_argument);
}

TEST(Config, DefaultsFollowTrainingProtocol) {
    const ExperimentConfig c;
    EXPECT_EQ(c.max_epochs, 100u);
    EXPECT_EQ(c.early_stop_delta, 1e-7);
    EXPECT_EQ(c.early_stop_patience, 1u);
    EXPECT_EQ(c.early_stop_mode, EarlyStopMode::previous);
    EXPECT_EQ(c.batch_size, 128u);
    EXPECT_EQ(c.learning_rate, 1e-3);
    EXPECT_EQ(c.model.d_model, 256u);
    EXPECT_EQ(c.model.ff_dim, 384u);
    EXPECT_EQ(c.model.encoder_layers, 2u);
    EXPECT_EQ(c.model.heads, 4u);
}

TEST(Config, TextRoundTripAndHash) {
    auto c = tiny_config();
    c.seeds = {4, 5};
    const auto back = parse_config(c.to_text());
    EXPECT_EQ(back.to_text(), c.to_text());
    EXPECT_EQ(back.hash(), c.hash());
    EXPECT_EQ(c.hash().size(), 16u);

    auto other = c;
    other.seeds = {9};
    other.workers = 3;
    other.output_dir = "/tmp/elsewhere";
    EXPECT_EQ(other.hash(), c.hash());
    other.learning_rate = 0.5;
    EXPECT_NE(other.hash(), c.hash());
}

TEST(Config, EveryKeyHasGetter) {
    const ExperimentConfig c;
    for (const auto& key : ExperimentConfig::keys()) EXPECT_NO_THROW(c.get(key)) << key;
}

TEST(Config, ResolvedModelDropsNeighborsForNone) {
    auto c = tiny_config();
    EXPECT_EQ(c.resolved_model().k, 1u);
    c.ablation = AblationMode::none;
    EXPECT_EQ(c.resolved_model().k, 0u);
}

TEST(EarlyStopper, StopsOnSmallImprovement) {
    EarlyStopper s(1e-7, 1, EarlyStopMode::previous);
    EXPECT_FALSE(s.observe(1.0));
    EXPECT_FALSE(s.observe(0.5));
    EXPECT_TRUE(s.observe(0.5 - 5e-8));
    EXPECT_EQ(s.epochs_seen(), 3u);
}

TEST(EarlyStopper, IdenticalLossesStop) {
    EarlyStopper s(1e-7, 1, EarlyStopMode::previous);
    EXPECT_FALSE(s.observe(0.3));
    EXPECT_TRUE(s.observe(0.3));
}

TEST(EarlyStopper, RisingLossStops) {
    EarlyStopper s(1e-7, 1, EarlyStopMode::previous);
    EXPECT_FALSE(s.observe(0.3));
    EXPECT_TRUE(s.observe(0.4));
}

TEST(EarlyStopper, PatienceCountsConsecutiveEpochs) {
    EarlyStopper s(1e-7, 2, EarlyStopMode::previous);
    EXPECT_FALSE(s.observe(1.0));
    EXPECT_FALSE(s.observe(1.0));
    EXPECT_FALSE(s.observe(0.5));
    EXPECT_FALSE(s.observe(0.5));
    EXPECT_TRUE(s.observe(0.5));
}

TEST(EarlyStopper, BestModeComparesAgainstBest) {
    EarlyStopper prev(1e-7, 2, EarlyStopMode::previous);
    EarlyStopper best(1e-7, 2, EarlyStopMode::best);
    // 1.0, 2.0 (worse), 1.5 (better than previous, worse than best).
    for (double v : {1.0, 2.0}) {
        prev.observe(v);
        best.observe(v);
    }
    EXPECT_FALSE(prev.observe(1.5));
    EXPECT_TRUE(best.observe(1.5));
}

TEST(Training, OneEpochRunsExactlyOnce) {
    auto c = tiny_config();
    c.max_epochs = 1;
    const auto prepared = prepare_experiment(c, 0);
    const auto out = train_model(c, prepared, 0);
    EXPECT_EQ(out.log.size(), 1u);
    EXPECT_FALSE(out.stopped_early);
    EXPECT_EQ(out.stop_reason, "max_epochs");
    EXPECT_EQ(out.best_epoch, 1u);
}

TEST(Training, ScriptedFlatValidationStops) {
    auto c = tiny_config();
    c.max_epochs = 10;
    const auto prepared = prepare_experiment(c, 0);
    TrainHooks hooks;
    hooks.val_loss_override = [](std::size_t, double) { return 0.25; };
    const auto out = train_model(c, prepared, 0, hooks);
    EXPECT_EQ(out.log.size(), 2u);
    EXPECT_TRUE(out.stopped_early);
    EXPECT_EQ(out.stop_reason, "early_stop");
}

TEST(Training, MaxStepsCapsOptimizerSteps) {
    auto c = tiny_config();
    c.max_epochs = 50;
    c.max_steps = 7;
    const auto prepared = prepare_experiment(c, 0);
    const auto out = train_model(c, prepared, 0);
    EXPECT_EQ(out.steps, 7u);
    EXPECT_EQ(out.stop_reason, "max_steps");
}

TEST(Training, TrainLossDecreasesOnTinyTask) {
    auto c = tiny_config();
    c.max_epochs = 5;
    c.early_stop_patience = 100;
    std::size_t decreasing = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto prepared = prepare_experiment(c, seed);
        const auto out = train_model(c, prepared, seed);
        ASSERT_EQ(out.log.size(), 5u);
        bool ok = true;
        for (std::size_t e = 1; e < 5; ++e) ok = ok && out.log[e].train_loss < out.log[e - 1].train_loss;
        decreasing += ok;
    }
    EXPECT_GE(decreasing, 4u);
}

TEST(Training, DivergenceNamesEpoch) {
    auto c = tiny_config();
    c.learning_rate = 1e300;
    c.max_epochs = 2;
    const auto prepared = prepare_experiment(c, 0);
    try {
        train_model(c, prepared, 0);
        FAIL() << "expected divergence";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
    }
}

TEST(Training, BestCheckpointIsKept) {
    auto c = tiny_config();
    c.max_epochs = 4;
    c.early_stop_patience = 100;
    const auto prepared = prepare_experiment(c, 0);
    TrainHooks hooks;
    hooks.val_loss_override = [](std::size_t epoch, double) { return epoch == 2 ? 0.1 : 1.0; };
    const auto out = train_model(c, prepared, 0, hooks);
    EXPECT_EQ(out.best_epoch, 2u);
    EXPECT_EQ(out.best_val_loss, 0.1);
}

TEST(Ablation, ReindexOffRefusedAboveCeiling) {
    auto c = tiny_config();
    c.ablation = AblationMode::reindex_off;
    c.reindex_element_ceiling = 100;
    const auto prepared = prepare_experiment(c, 0);
    try {
        train_model(c, prepared, 0);
        FAIL() << "expected refusal";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("reindex_element_ceiling = 100"), std::string::npos) << e.what();
    }
}

TEST(Ablation, NoneUsesOneInputChannel) {
    auto c = tiny_config();
    c.ablation = AblationMode::none;
    const auto prepared = prepare_experiment(c, 0);
    EXPECT_EQ(prepared.k(), 0u);
    SthdModel model(c.resolved_model(), 0);
    EXPECT_EQ(model.config().k, 0u);
}

TEST(Ablation, UnrelatedNeighborsComeFromForeignGroups) {
    auto c = tiny_config();
    c.synthetic.num_channels = 12;
    c.synthetic.num_groups = 3;
    c.synthetic.intra_group_coupling = 0.9;
    c.synthetic.noise_std = 0.3;
    c.k = 3;
    c.ablation = AblationMode::unrelated;
    const auto prepared = prepare_experiment(c, 0);
    for (std::size_t ch = 0; ch < 12; ++ch) {
        for (const auto& n : prepared.neighbors.of(ch)) {
            EXPECT_NE(synthetic_group_of(c.synthetic, n.channel), synthetic_group_of(c.synthetic, ch));
        }
    }
    c.ablation = AblationMode::related;
    const auto related = prepare_experiment(c, 0);
    for (std::size_t ch = 0; ch < 12; ++ch) {
        for (const auto& n : related.neighbors.of(ch)) {
            EXPECT_EQ(synthetic_group_of(c.synthetic, n.channel), synthetic_group_of(c.synthetic, ch));
        }
    }
}

TEST(Ablation, KMustBeBelowChannelCount) {
    auto c = tiny_config();
    c.k = 4;
    EXPECT_THROW(prepare_experiment(c, 0), std::invalid_argument);
}

TEST(Reports, OneRecordPerModeSeedHorizon) {
    auto c = tiny_config();
    c.max_epochs = 1;
    c.seeds = {0, 1};
    const auto report = run_ablation(c, {AblationMode::related, AblationMode::none});
    EXPECT_EQ(report["schema_version"], 1);
    EXPECT_EQ(report["kind"], "ablation");
    ASSERT_EQ(report["records"].size(), 4u);
    std::set<std::pair<std::string, std::uint64_t>> seen;
    for (const auto& r : report["records"]) {
        seen.insert({r["mode"].get<std::string>(), r["seed"].get<std::uint64_t>()});
        EXPECT_EQ(r["horizon"], 6);
        auto mode_config = c;
        mode_config.ablation = parse_ablation_mode(r["mode"].get<std::string>());
        EXPECT_EQ(r["config_hash"], mode_config.hash());
        for (const char* key : {"rmse", "wrmspe", "mae", "wape", "wall_time"}) EXPECT_TRUE(r.contains(key)) << key;
    }
    EXPECT_EQ(seen.size(), 4u);
}

TEST(Reports, BaselinesAddRecords) {
    auto c = tiny_config();
    c.max_epochs = 1;
    c.baselines = true;
    c.linear_epochs = 2;
    const auto report = train_report(c);
    ASSERT_EQ(report["records"].size(), 3u);
    EXPECT_EQ(report["records"][0]["model"], "STHD");
    EXPECT_EQ(report["records"][1]["model"], "Naive");
    EXPECT_EQ(report["records"][2]["model"], "Linear");
}

TEST(KSweep, ZeroReducesToNone) {
    auto c = tiny_config();
    c.max_epochs = 1;
    const auto sweep = run_k_sweep(c, {0});
    auto none = c;
    none.ablation = AblationMode::none;
    const auto ablation = run_ablation(none, {AblationMode::none});
    ASSERT_EQ(sweep.report["records"].size(), 1u);
    EXPECT_EQ(sweep.report["records"][0]["K"], 0);
    EXPECT_EQ(sweep.report["records"][0]["mae"], ablation["records"][0]["mae"]);
    EXPECT_EQ(sweep.csv.substr(0, sweep.csv.find('\n')), "k,seed,horizon,rmse,wrmspe,mae,wape");
    EXPECT_EQ(std::count(sweep.csv.begin(), sweep.csv.end(), '\n'), 2);
}

TEST(Reproducibility, CheckpointAndReportAreBitIdentical) {
    const auto dir = std::filesystem::temp_directory_path() / "sthd_unit_repro";
    std::filesystem::remove_all(dir);
    auto c = tiny_config();
    c.max_epochs = 2;
    std::vector<std::string> reports, bins;
    for (int run = 0; run < 2; ++run) {
        c.output_dir = (dir / std::to_string(run)).string();
        std::filesystem::create_directories(c.output_dir);
        auto report = train_report(c);
        for (auto& r : report["records"]) {
            r.erase("wall_time");
            for (auto& e : r["epochs"]) e.erase("seconds");
        }
        reports.push_back(report.dump());
        auto stem = checkpoint_stem(c, 0);
        stem += ".bin";
        bins.push_back(read_file(stem));
    }
    EXPECT_EQ(reports[0], reports[1]);
    EXPECT_FALSE(bins[0].empty());
    EXPECT_EQ(bins[0], bins[1]);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, EvaluateMatchesTrainingMetrics) {
    const auto dir = std::filesystem::temp_directory_path() / "sthd_unit_eval";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    auto c = tiny_config();
    c.max_epochs = 2;
    c.output_dir = dir.string();
    const auto trained = train_report(c);
    const auto evaluated = evaluate_checkpoint(c, checkpoint_stem(c, 0));
    ASSERT_EQ(evaluated["records"].size(), 1u);
    for (const char* key : {"rmse", "wrmspe", "mae", "wape"}) {
        EXPECT_EQ(evaluated["records"][0][key], trained["records"][0][key]) << key;
    }
    std::filesystem::remove_all(dir);
}

TEST(Workers, EnvironmentOverride) {
    ::setenv("STHD_WORKERS", "3", 1);
    EXPECT_EQ(resolve_workers(8), 3u);
    ::unsetenv("STHD_WORKERS");
    EXPECT_EQ(resolve_workers(5), 5u);
    EXPECT_GE(resolve_workers(0), 1u);
}

}  // namespace
}  // namespace sthd
