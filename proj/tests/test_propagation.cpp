#include <doctest.h>

#include <filesystem>
#include <random>

#include "countgrid/errors.hpp"
#include "countgrid/propagation.hpp"

using namespace countgrid;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("countgrid_prop_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("merge keeps existing boxes and accepts confident non-overlapping predictions") {
    LabelSet current;
    current.image_id = "img";
    current.stage = 1;
    current.boxes.push_back({{10, 10, 20, 20}, Provenance::Seed, 1});

    std::vector<ScoredBox> preds{
        {{10, 10, 20, 30}, 0.95},    // overlaps the seed -> rejected
        {{100, 100, 20, 20}, 0.95},  // clean -> accepted
        {{200, 200, 20, 20}, 0.85},  // below the score bar -> rejected
    };
    const LabelSet next = merge_labels(current, preds, 0.9, 0.2, 1);
    CHECK(next.stage == 2);
    REQUIRE(next.boxes.size() == 2);
    CHECK(next.boxes[0].box.x == 10);
    CHECK(next.boxes[0].provenance == Provenance::Seed);
    CHECK(next.boxes[1].box.x == 100);
    CHECK(next.boxes[1].provenance == Provenance::Propagated);
    CHECK(next.boxes[1].stage == 1);
}

TEST_CASE("merge checks accepted predictions against each other") {
    LabelSet current;
    current.image_id = "img";
    std::vector<ScoredBox> preds{
        {{50, 50, 20, 20}, 0.92},
        {{52, 50, 20, 20}, 0.97},  // higher score wins the overlap
    };
    const LabelSet next = merge_labels(current, preds, 0.9, 0.2, 3);
    REQUIRE(next.boxes.size() == 1);
    CHECK(next.boxes[0].box.x == 52);
    CHECK(next.boxes[0].stage == 3);
}

TEST_CASE("merge is monotone and respects an impossible score bar") {
    LabelSet current;
    current.boxes.push_back({{0, 0, 10, 10}, Provenance::Seed, 1});
    std::vector<ScoredBox> preds{{{40, 40, 10, 10}, 0.99}};
    const LabelSet grown = merge_labels(current, preds, 0.9, 0.2, 1);
    CHECK(grown.boxes.size() >= current.boxes.size());
    const LabelSet frozen = merge_labels(current, preds, 1.5, 0.2, 1);
    CHECK(frozen.boxes.size() == current.boxes.size());
}

TEST_CASE("label snapshots round trip") {
    TempDir tmp;
    std::vector<LabelSet> sets(2);
    sets[0].image_id = "scene_00000";
    sets[0].stage = 3;
    sets[0].boxes.push_back({{1.5, 2.5, 10, 11}, Provenance::Seed, 1});
    sets[0].boxes.push_back({{40, 40, 9, 9}, Provenance::Propagated, 2});
    sets[1].image_id = "scene_00001";
    sets[1].stage = 3;

    const std::string path = (tmp.path / "labels.jsonl").string();
    save_label_sets(sets, path);
    const auto loaded = load_label_sets(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].image_id == "scene_00000");
    CHECK(loaded[0].stage == 3);
    REQUIRE(loaded[0].boxes.size() == 2);
    CHECK(loaded[0].boxes[0].box.x == 1.5);
    CHECK(loaded[0].boxes[0].provenance == Provenance::Seed);
    CHECK(loaded[0].boxes[1].provenance == Provenance::Propagated);
    CHECK(loaded[0].boxes[1].stage == 2);
    CHECK(loaded[1].boxes.empty());
}

TEST_CASE("stage logs round trip with checksums") {
    TempDir tmp;
    std::vector<StageLog> logs(2);
    logs[0].stage = 1;
    logs[0].model_checksum = 0xdeadbeefULL;
    logs[0].per_image = {{1, "a", 5, 5}, {1, "b", 7, 6}};
    logs[1].stage = 2;
    logs[1].model_checksum = 42;
    logs[1].per_image = {{2, "a", 9, 8}};

    const std::string path = (tmp.path / "stage_log.jsonl").string();
    save_stage_logs(logs, path);
    const auto loaded = load_stage_logs(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].model_checksum == 0xdeadbeefULL);
    REQUIRE(loaded[0].per_image.size() == 2);
    CHECK(loaded[0].per_image[1].image_id == "b");
    CHECK(loaded[0].per_image[1].correct == 6);
    CHECK(loaded[1].per_image[0].expanded == 9);
}

TEST_CASE("count_image with a constant-score model") {
    GridModel model;
    model.stride = 32;
    model.receptive_field = 33;
    model.anchor_w = model.anchor_h = 20;
    model.weights.assign(static_cast<size_t>(kNumHeads) * model.feature_dim(), 0.0);
    Image img(256, 256, 1);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : img.data) {
        v = u(rng);
    }
    // zero weights -> every cell scores exactly 0.5
    const auto [low_count, low_boxes] = count_image(img, model, 0.4);
    CHECK(low_count == 64);
    CHECK(low_boxes.size() == 64);
    const auto [high_count, high_boxes] = count_image(img, model, 0.6);
    CHECK(high_count == 0);
    CHECK(high_boxes.empty());
}

TEST_CASE("propagation requires seed boxes") {
    std::vector<std::pair<ImageRecord, LabelSet>> train_set(1);
    train_set[0].first.image_id = "empty";
    train_set[0].first.pixels = Image(64, 64, 1, 0.5);
    train_set[0].second.image_id = "empty";
    StageSchedule schedule;
    AugmentConfig aug;
    CHECK_THROWS_AS(run_propagation(train_set, {}, schedule, aug, ModelSpec{}), DataError);
}

TEST_CASE("propagation smoke run persists snapshots and logs") {
    SceneSpec spec;
    spec.image_size = 96;
    spec.objects_min = spec.objects_max = 4;
    spec.object_size_min = 10;
    spec.object_size_max = 14;
    spec.rng_seed = 7;
    const auto records = generate_scenes(spec, 3);

    std::vector<std::pair<ImageRecord, LabelSet>> train_set;
    for (const auto& rec : records) {
        LabelSet labels;
        labels.image_id = rec.image_id;
        // keep two of the four boxes as seeds
        for (size_t i = 0; i < 2 && i < rec.boxes.size(); ++i) {
            labels.boxes.push_back({rec.boxes[i], Provenance::Seed, 1});
        }
        train_set.emplace_back(rec, labels);
    }

    StageSchedule schedule;
    schedule.num_stages = 2;
    schedule.stage_training.iterations = 20;
    schedule.stage_training.batch_size = 4;
    schedule.stage_training.background_slots = 0;
    schedule.stage_training.lr_schedule = {{1000000, 0.0005}};
    schedule.final_training = schedule.stage_training;

    AugmentConfig aug;
    aug.rotation_enabled = false;
    aug.scale_long_side_min = aug.scale_long_side_max = 96;
    aug.crop_size = 96;

    ModelSpec model_spec;
    model_spec.stride = 16;
    model_spec.receptive_field = 17;

    TempDir tmp;
    const auto result = run_propagation(train_set, {}, schedule, aug, model_spec,
                                        tmp.path.string());

    REQUIRE(result.final_labels.size() == 3);
    REQUIRE(result.logs.size() == 2);
    for (const auto& log : result.logs) {
        CHECK(log.per_image.size() == 3);
        CHECK(log.model_checksum != 0);
    }

    // seeds survive every stage
    for (size_t i = 0; i < train_set.size(); ++i) {
        const auto& final_boxes = result.final_labels[i].boxes;
        REQUIRE(final_boxes.size() >= train_set[i].second.boxes.size());
        for (size_t b = 0; b < train_set[i].second.boxes.size(); ++b) {
            CHECK(final_boxes[b].box.x == train_set[i].second.boxes[b].box.x);
            CHECK(final_boxes[b].provenance == Provenance::Seed);
        }
    }

    // snapshots for stages 1..S+1 plus the stage log exist and line up
    for (int s = 1; s <= 3; ++s) {
        const auto snap = tmp.path / ("labels_stage_" + std::to_string(s) + ".jsonl");
        REQUIRE(fs::exists(snap));
        const auto sets = load_label_sets(snap.string());
        CHECK(sets.size() == 3);
    }
    const auto first = load_label_sets((tmp.path / "labels_stage_1.jsonl").string());
    for (size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].boxes.size() == train_set[i].second.boxes.size());
    }
    const auto last = load_label_sets((tmp.path / "labels_stage_3.jsonl").string());
    for (size_t i = 0; i < last.size(); ++i) {
        CHECK(last[i].boxes.size() == result.final_labels[i].boxes.size());
    }
    const auto logs = load_stage_logs((tmp.path / "stage_log.jsonl").string());
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].model_checksum == result.logs[0].model_checksum);
    CHECK(logs[1].per_image[0].expanded == result.logs[1].per_image[0].expanded);

    // expanded counts in the log match the persisted label sets
    for (int s = 0; s < 2; ++s) {
        const auto sets =
            load_label_sets((tmp.path / ("labels_stage_" + std::to_string(s + 2) + ".jsonl"))
                                .string());
        for (size_t i = 0; i < sets.size(); ++i) {
            CHECK(static_cast<long long>(sets[i].boxes.size()) ==
                  result.logs[s].per_image[i].expanded);
        }
    }
}
