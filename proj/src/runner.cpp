#include "countgrid/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "countgrid/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace countgrid {

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must look like key.path=value: " + assignment);
    }
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // bare strings stay strings
    }
    json* node = &j;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) {
        keys.push_back(key);
    }
    if (keys.empty()) {
        throw ConfigError("empty override path: " + assignment);
    }
    for (size_t i = 0; i + 1 < keys.size(); ++i) {
        node = &(*node)[keys[i]];
    }
    (*node)[keys.back()] = value;
}

std::optional<int> parse_count_or_all(const json& j, const std::string& key) {
    if (!j.contains(key)) {
        return std::nullopt;
    }
    const auto& v = j.at(key);
    if (v.is_string()) {
        if (v.get<std::string>() == "ALL") {
            return std::nullopt;
        }
        throw ConfigError(key + ": expected an integer or \"ALL\"");
    }
    return v.get<int>();
}

TrainConfig parse_train_config(const json& j, std::vector<std::string>& errors,
                               const std::string& where) {
    TrainConfig c;
    try {
        if (j.contains("iterations")) c.iterations = j.at("iterations").get<long long>();
        if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
        if (j.contains("background_slots"))
            c.background_slots = j.at("background_slots").get<int>();
        if (j.contains("T")) c.gate_horizon = j.at("T").get<long long>();
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("noobj_weight")) c.noobj_weight = j.at("noobj_weight").get<double>();
        if (j.contains("coord_weight")) c.coord_weight = j.at("coord_weight").get<double>();
        if (j.contains("rng_seed")) c.rng_seed = j.at("rng_seed").get<uint64_t>();
        if (j.contains("threads")) c.threads = j.at("threads").get<int>();
        if (j.contains("lr_schedule")) {
            c.lr_schedule.clear();
            for (const auto& phase : j.at("lr_schedule")) {
                c.lr_schedule.emplace_back(phase.at(0).get<long long>(),
                                           phase.at(1).get<double>());
            }
        }
    } catch (const json::exception& e) {
        errors.push_back(where + ": " + e.what());
    }
    if (c.background_slots > c.batch_size) {
        errors.push_back(where + ": background_slots exceeds batch_size");
    }
    if (c.iterations < 0 || c.gate_horizon < 0) {
        errors.push_back(where + ": iterations and T must be non-negative");
    }
    return c;
}

AugmentConfig parse_augment_config(const json& j, std::vector<std::string>& errors) {
    AugmentConfig a;
    try {
        if (j.contains("scale_long_side")) {
            a.scale_long_side_min = j.at("scale_long_side").at(0).get<double>();
            a.scale_long_side_max = j.at("scale_long_side").at(1).get<double>();
        }
        if (j.contains("crop_size")) a.crop_size = j.at("crop_size").get<int>();
        if (j.contains("aspect_jitter")) {
            a.aspect_jitter_min = j.at("aspect_jitter").at(0).get<double>();
            a.aspect_jitter_max = j.at("aspect_jitter").at(1).get<double>();
        }
        if (j.contains("intensity_jitter")) {
            const auto& ij = j.at("intensity_jitter");
            if (ij.contains("add")) {
                a.intensity_add_min = ij.at("add").at(0).get<double>();
                a.intensity_add_max = ij.at("add").at(1).get<double>();
            }
            if (ij.contains("mult")) {
                a.intensity_mult_min = ij.at("mult").at(0).get<double>();
                a.intensity_mult_max = ij.at("mult").at(1).get<double>();
            }
        }
        if (j.contains("rotation_enabled"))
            a.rotation_enabled = j.at("rotation_enabled").get<bool>();
        if (j.contains("rng_seed")) a.rng_seed = j.at("rng_seed").get<uint64_t>();
    } catch (const json::exception& e) {
        errors.push_back(std::string("augment: ") + e.what());
    }
    if (a.crop_size <= 0) {
        errors.push_back("augment: crop_size must be positive");
    }
    if (a.scale_long_side_min > a.scale_long_side_max) {
        errors.push_back("augment: scale_long_side range is inverted");
    }
    return a;
}

std::string resolve_output_dir(std::string dir) {
    if (const char* root = std::getenv("COUNTGRID_OUTPUT_ROOT");
        root && !dir.empty() && fs::path(dir).is_relative()) {
        return (fs::path(root) / dir).string();
    }
    return dir;
}

}  // namespace

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j = read_json_file(path);
    for (const auto& o : overrides) {
        apply_override(j, o);
    }

    std::vector<std::string> errors;
    RunConfig c;
    try {
        const auto& paths = j.at("paths");
        c.train_annotations = paths.at("train_annotations").get<std::string>();
        c.test_annotations = paths.at("test_annotations").get<std::string>();
        c.output_dir = resolve_output_dir(paths.at("output_dir").get<std::string>());
        if (paths.contains("background_annotations")) {
            c.background_annotations = paths.at("background_annotations").get<std::string>();
        }
    } catch (const json::exception& e) {
        errors.push_back(std::string("paths: ") + e.what());
    }

    if (j.contains("subsample")) {
        const auto& js = j.at("subsample");
        try {
            c.subsample.num_images = parse_count_or_all(js, "num_images");
            c.subsample.boxes_per_image = parse_count_or_all(js, "boxes_per_image");
            if (js.contains("rng_seed")) {
                c.subsample.rng_seed = js.at("rng_seed").get<uint64_t>();
            }
        } catch (const json::exception& e) {
            errors.push_back(std::string("subsample: ") + e.what());
        }
    }

    if (j.contains("model")) {
        const auto& jm = j.at("model");
        try {
            if (jm.contains("stride")) c.model.stride = jm.at("stride").get<int>();
            if (jm.contains("receptive_field"))
                c.model.receptive_field = jm.at("receptive_field").get<int>();
            if (jm.contains("anchor_w")) c.model.anchor_w = jm.at("anchor_w").get<double>();
            if (jm.contains("anchor_h")) c.model.anchor_h = jm.at("anchor_h").get<double>();
            if (jm.contains("init_seed")) c.model.init_seed = jm.at("init_seed").get<uint64_t>();
        } catch (const json::exception& e) {
            errors.push_back(std::string("model: ") + e.what());
        }
        if (c.model.receptive_field < c.model.stride) {
            errors.push_back("model: receptive_field must be >= stride");
        }
    }

    if (j.contains("schedule")) {
        const auto& js = j.at("schedule");
        try {
            if (js.contains("num_stages")) c.schedule.num_stages = js.at("num_stages").get<int>();
            if (js.contains("merge_score"))
                c.schedule.merge_score = js.at("merge_score").get<double>();
            if (js.contains("merge_iou")) c.schedule.merge_iou = js.at("merge_iou").get<double>();
            if (js.contains("quality_iou"))
                c.schedule.quality_iou = js.at("quality_iou").get<double>();
            if (js.contains("warm_start"))
                c.schedule.warm_start = js.at("warm_start").get<bool>();
        } catch (const json::exception& e) {
            errors.push_back(std::string("schedule: ") + e.what());
        }
        if (js.contains("stage_training")) {
            c.schedule.stage_training =
                parse_train_config(js.at("stage_training"), errors, "schedule.stage_training");
        }
        if (js.contains("final_training")) {
            c.schedule.final_training =
                parse_train_config(js.at("final_training"), errors, "schedule.final_training");
        }
        if (c.schedule.merge_score <= 0.0 || c.schedule.merge_score > 1.0 ||
            c.schedule.merge_iou <= 0.0 || c.schedule.merge_iou > 1.0) {
            errors.push_back("schedule: merge_score and merge_iou must be in (0, 1]");
        }
        if (c.schedule.num_stages < 0) {
            errors.push_back("schedule: num_stages must be >= 0");
        }
    }

    if (j.contains("augment")) {
        c.augment = parse_augment_config(j.at("augment"), errors);
    }
    if (j.contains("metric_grid")) {
        c.metric_grid = j.at("metric_grid").get<std::vector<double>>();
    } else {
        c.metric_grid = default_counting_grid();
    }
    if (j.contains("eval_score_floor")) {
        c.eval_score_floor = j.at("eval_score_floor").get<double>();
    }
    if (j.contains("eval_nms_iou")) {
        c.eval_nms_iou = j.at("eval_nms_iou").get<double>();
    }
    if (j.contains("test_resize_area")) {
        c.test_resize_area = j.at("test_resize_area").get<double>();
    }

    for (const std::string* p : {&c.train_annotations, &c.test_annotations}) {
        if (!p->empty() && !fs::exists(*p)) {
            errors.push_back("missing input file: " + *p);
        }
    }
    if (!c.background_annotations.empty() && !fs::exists(c.background_annotations)) {
        errors.push_back("missing input file: " + c.background_annotations);
    }

    if (!errors.empty()) {
        std::string msg = "configuration errors:";
        for (const auto& e : errors) {
            msg += "\n  - " + e;
        }
        throw ConfigError(msg);
    }
    return c;
}

SceneSpec load_scene_spec(const std::string& path) {
    const json j = read_json_file(path);
    SceneSpec s;
    try {
        if (j.contains("image_size")) s.image_size = j.at("image_size").get<int>();
        if (j.contains("objects_per_image")) {
            s.objects_min = j.at("objects_per_image").at(0).get<int>();
            s.objects_max = j.at("objects_per_image").at(1).get<int>();
        }
        if (j.contains("object_size")) {
            s.object_size_min = j.at("object_size").at(0).get<double>();
            s.object_size_max = j.at("object_size").at(1).get<double>();
        }
        if (j.contains("object_intensity")) {
            s.object_intensity_min = j.at("object_intensity").at(0).get<double>();
            s.object_intensity_max = j.at("object_intensity").at(1).get<double>();
        }
        if (j.contains("background_level"))
            s.background_level = j.at("background_level").get<double>();
        if (j.contains("background_noise"))
            s.background_noise = j.at("background_noise").get<double>();
        if (j.contains("max_pairwise_iou"))
            s.max_pairwise_iou = j.at("max_pairwise_iou").get<double>();
        if (j.contains("rng_seed")) s.rng_seed = j.at("rng_seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return s;
}

void run_generate(const SceneSpec& spec, const std::string& out_dir, int count,
                  int background_count) {
    std::vector<ImageRecord> records = generate_scenes(spec, count);
    if (background_count > 0) {
        SceneSpec bg = spec;
        bg.rng_seed = spec.rng_seed + 1;
        auto pool = generate_background_pool(bg, background_count);
        for (auto& rec : pool) {
            records.push_back(std::move(rec));
        }
    }
    save_dataset(records, resolve_output_dir(out_dir));
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open for checksum: " + path);
    }
    uint64_t hash = 1469598103934665603ULL;  // FNV-1a
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 1099511628211ULL;
        }
        if (in.eof()) {
            break;
        }
    }
    return hash;
}

namespace {

struct TestSetPredictions {
    PredictionsByImage predictions;
    BoxesByImage ground_truth;
    std::map<std::string, long long> true_counts;
};

TestSetPredictions predict_test_set(const std::vector<ImageRecord>& test_records,
                                    const GridModel& model, const RunConfig& config) {
    TestSetPredictions out;
    for (const auto& rec : test_records) {
        Image pixels = to_gray(rec.pixels);
        double scale = 1.0;
        if (config.test_resize_area > 0.0) {
            scale = std::sqrt(config.test_resize_area /
                              (static_cast<double>(pixels.width) * pixels.height));
            pixels = resize_bilinear(pixels,
                                     std::max(1, static_cast<int>(std::lround(pixels.width * scale))),
                                     std::max(1, static_cast<int>(std::lround(pixels.height * scale))));
        }
        std::vector<ScoredBox> preds =
            predict(pixels, model, config.eval_score_floor, config.eval_nms_iou);
        if (scale != 1.0) {
            for (auto& sb : preds) {
                sb.box = {sb.box.x / scale, sb.box.y / scale, sb.box.w / scale,
                          sb.box.h / scale};
            }
        }
        out.predictions[rec.image_id] = std::move(preds);
        out.ground_truth[rec.image_id] = rec.boxes;
        out.true_counts[rec.image_id] = static_cast<long long>(rec.boxes.size());
    }
    return out;
}

EvalReport build_report(const TestSetPredictions& t, const std::vector<double>& grid) {
    EvalReport report;
    report.num_images = static_cast<long long>(t.ground_truth.size());
    report.map_at_50 = average_precision(t.predictions, t.ground_truth, 0.5);
    const auto [mae_thr, mae] =
        select_counting_threshold(t.predictions, t.true_counts, grid, CountObjective::Mae);
    const auto [rmse_thr, rmse] =
        select_counting_threshold(t.predictions, t.true_counts, grid, CountObjective::Rmse);
    report.mae = mae;
    report.mae_threshold = mae_thr;
    report.rmse = rmse;
    report.rmse_threshold = rmse_thr;
    return report;
}

void save_predictions(const PredictionsByImage& predictions, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write predictions: " + path);
    }
    for (const auto& [id, preds] : predictions) {
        json jboxes = json::array();
        for (const auto& sb : preds) {
            jboxes.push_back({{"x", sb.box.x},
                              {"y", sb.box.y},
                              {"w", sb.box.w},
                              {"h", sb.box.h},
                              {"score", sb.score}});
        }
        out << json{{"image", id}, {"boxes", jboxes}}.dump() << "\n";
    }
}

void write_manifest(const std::vector<std::string>& files, const std::string& out_dir,
                    const std::string& manifest_path) {
    json entries = json::array();
    for (const auto& file : files) {
        entries.push_back(
            {{"file", file},
             {"fnv1a64", file_checksum((fs::path(out_dir) / file).string())}});
    }
    std::ofstream out(manifest_path);
    out << json{{"artifacts", entries}}.dump(2) << "\n";
}

}  // namespace

PredictionsByImage load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open predictions: " + path);
    }
    PredictionsByImage predictions;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const json j = json::parse(line);
        std::vector<ScoredBox> preds;
        for (const auto& jb : j.at("boxes")) {
            preds.push_back({{jb.at("x").get<double>(), jb.at("y").get<double>(),
                              jb.at("w").get<double>(), jb.at("h").get<double>()},
                             jb.at("score").get<double>()});
        }
        predictions[j.at("image").get<std::string>()] = std::move(preds);
    }
    return predictions;
}

RunArtifacts run_experiment(const RunConfig& config, RunMode mode) {
    const std::vector<ImageRecord> all_train = load_annotations(config.train_annotations);
    const std::vector<ImageRecord> test_records = load_annotations(config.test_annotations);
    std::vector<ImageRecord> background_pool;
    if (!config.background_annotations.empty()) {
        background_pool = load_annotations(config.background_annotations);
    }

    SubsampleResult sub = subsample(all_train, config.subsample);

    fs::create_directories(config.output_dir);
    std::vector<std::string> artifacts;

    GridModel final_model;
    std::vector<LabelSet> final_labels;
    if (mode == RunMode::Pfod) {
        PropagationResult prop =
            run_propagation(sub.train, background_pool, config.schedule, config.augment,
                            config.model, config.output_dir);
        final_model = std::move(prop.final_model);
        final_labels = std::move(prop.final_labels);
        artifacts.push_back("labels_stage_1.jsonl");
        for (int s = 1; s <= config.schedule.num_stages; ++s) {
            artifacts.push_back("labels_stage_" + std::to_string(s + 1) + ".jsonl");
        }
        if (config.schedule.num_stages > 0) {
            artifacts.push_back("stage_log.jsonl");
        }
    } else {
        // OD baseline: Eq. 1 throughout, the gate never engages
        StageSchedule od_schedule = config.schedule;
        od_schedule.num_stages = 0;
        PropagationResult prop = run_propagation(sub.train, background_pool, od_schedule,
                                                 config.augment, config.model,
                                                 config.output_dir);
        final_model = std::move(prop.final_model);
        final_labels = std::move(prop.final_labels);
        artifacts.push_back("labels_stage_1.jsonl");
    }

    RunArtifacts result;
    result.model_path = (fs::path(config.output_dir) / "model.bin").string();
    save_model(final_model, result.model_path);
    artifacts.push_back("model.bin");

    save_label_sets(final_labels,
                    (fs::path(config.output_dir) / "labels_final.jsonl").string());
    artifacts.push_back("labels_final.jsonl");

    const TestSetPredictions t = predict_test_set(test_records, final_model, config);
    save_predictions(t.predictions,
                     (fs::path(config.output_dir) / "predictions.jsonl").string());
    artifacts.push_back("predictions.jsonl");

    result.report = build_report(t, config.metric_grid);
    result.eval_path = (fs::path(config.output_dir) / "eval.json").string();
    {
        std::ofstream out(result.eval_path);
        out << result.report.to_json() << "\n";
    }
    artifacts.push_back("eval.json");

    result.manifest_path = (fs::path(config.output_dir) / "manifest.json").string();
    write_manifest(artifacts, config.output_dir, result.manifest_path);
    return result;
}

EvalReport run_evaluate(const std::string& predictions_path,
                        const std::string& test_annotations,
                        const std::vector<double>& grid) {
    const PredictionsByImage predictions = load_predictions(predictions_path);
    const std::vector<ImageRecord> test_records = load_annotations(test_annotations);
    TestSetPredictions t;
    t.predictions = predictions;
    for (const auto& rec : test_records) {
        t.ground_truth[rec.image_id] = rec.boxes;
        t.true_counts[rec.image_id] = static_cast<long long>(rec.boxes.size());
    }
    return build_report(t, grid);
}

void run_visualize(const std::string& model_path, const std::string& annotations_path,
                   double threshold, const std::string& out_dir) {
    const GridModel model = load_model(model_path);
    const std::vector<ImageRecord> records = load_annotations(annotations_path);
    const std::string resolved = resolve_output_dir(out_dir);
    fs::create_directories(resolved);
    for (const auto& rec : records) {
        const auto [count, boxes] = count_image(to_gray(rec.pixels), model, threshold);
        Image overlay(rec.width(), rec.height(), 3);
        for (int y = 0; y < rec.height(); ++y) {
            for (int x = 0; x < rec.width(); ++x) {
                const double v = rec.pixels.channels == 1 ? rec.pixels.at(x, y)
                                                          : to_gray(rec.pixels).at(x, y);
                overlay.at(x, y, 0) = v;
                overlay.at(x, y, 1) = v;
                overlay.at(x, y, 2) = v;
            }
        }
        for (const auto& sb : boxes) {
            bool correct = false;
            for (const auto& gt : rec.boxes) {
                if (iou(sb.box, gt) > 0.3) {
                    correct = true;
                    break;
                }
            }
            const double r = correct ? 0.0 : 1.0;
            const double g = correct ? 1.0 : 0.0;
            const int x0 = std::clamp(static_cast<int>(std::lround(sb.box.x)), 0,
                                      overlay.width - 1);
            const int y0 = std::clamp(static_cast<int>(std::lround(sb.box.y)), 0,
                                      overlay.height - 1);
            const int x1 = std::clamp(static_cast<int>(std::lround(sb.box.x2())), 0,
                                      overlay.width - 1);
            const int y1 = std::clamp(static_cast<int>(std::lround(sb.box.y2())), 0,
                                      overlay.height - 1);
            for (int x = x0; x <= x1; ++x) {
                for (int y : {y0, y1}) {
                    overlay.at(x, y, 0) = r;
                    overlay.at(x, y, 1) = g;
                    overlay.at(x, y, 2) = 0.0;
                }
            }
            for (int y = y0; y <= y1; ++y) {
                for (int x : {x0, x1}) {
                    overlay.at(x, y, 0) = r;
                    overlay.at(x, y, 1) = g;
                    overlay.at(x, y, 2) = 0.0;
                }
            }
        }
        const fs::path stem = fs::path(resolved) / fs::path(rec.image_id).filename();
        write_pnm(overlay, stem.string() + "_overlay.ppm");
        std::ofstream txt(stem.string() + "_counts.txt");
        txt << "pred=" << count << ", gt=" << rec.boxes.size() << "\n";
    }
}

}  // namespace countgrid
