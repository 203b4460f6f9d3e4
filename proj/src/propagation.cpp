#include "countgrid/propagation.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "countgrid/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace countgrid {

LabelSet merge_labels(const LabelSet& current, const std::vector<ScoredBox>& predictions,
                      double merge_score, double merge_iou, int stage) {
    LabelSet next = current;
    next.stage = stage + 1;

    std::vector<ScoredBox> sorted = predictions;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });

    std::vector<Box> accepted;
    for (const auto& sb : sorted) {
        if (sb.score < merge_score) {
            continue;
        }
        bool overlaps = false;
        for (const auto& lb : current.boxes) {
            if (iou(sb.box, lb.box) > merge_iou) {
                overlaps = true;
                break;
            }
        }
        for (const auto& b : accepted) {
            if (overlaps) {
                break;
            }
            if (iou(sb.box, b) > merge_iou) {
                overlaps = true;
            }
        }
        if (!overlaps) {
            accepted.push_back(sb.box);
            next.boxes.push_back({sb.box, Provenance::Propagated, stage});
        }
    }
    return next;
}

namespace {

GridModel make_model(const ModelSpec& spec,
                     const std::vector<std::pair<ImageRecord, LabelSet>>& train_set) {
    double aw = spec.anchor_w, ah = spec.anchor_h;
    if (aw <= 0.0 || ah <= 0.0) {
        std::vector<LabeledBox> all;
        for (const auto& [rec, labels] : train_set) {
            all.insert(all.end(), labels.boxes.begin(), labels.boxes.end());
        }
        const auto [mw, mh] = median_box_size(all);
        aw = mw;
        ah = mh;
    }
    return init_model(spec.stride, spec.receptive_field, aw, ah, spec.init_seed);
}

uint64_t stage_seed(uint64_t base, int stage) {
    // splitmix-style decorrelation of per-stage training seeds
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(stage + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

PropagationResult run_propagation(const std::vector<std::pair<ImageRecord, LabelSet>>& train_set,
                                  const std::vector<ImageRecord>& background_pool,
                                  const StageSchedule& schedule,
                                  const AugmentConfig& augment_config,
                                  const ModelSpec& model_spec, const std::string& snapshot_dir) {
    bool any_seed = false;
    for (const auto& [rec, labels] : train_set) {
        if (!labels.boxes.empty()) {
            any_seed = true;
        }
    }
    if (!any_seed) {
        throw DataError("run_propagation: no seed boxes in any training image");
    }
    if (!snapshot_dir.empty()) {
        fs::create_directories(snapshot_dir);
    }

    std::vector<std::pair<ImageRecord, LabelSet>> working = train_set;
    PropagationResult result;
    GridModel model = make_model(model_spec, working);

    if (!snapshot_dir.empty()) {
        std::vector<LabelSet> seeds;
        for (const auto& [rec, labels] : working) {
            seeds.push_back(labels);
        }
        save_label_sets(seeds, (fs::path(snapshot_dir) / "labels_stage_1.jsonl").string());
    }

    for (int stage = 1; stage <= schedule.num_stages; ++stage) {
        TrainConfig stage_config = schedule.stage_training;
        stage_config.gated = true;
        stage_config.rng_seed = stage_seed(schedule.stage_training.rng_seed, stage);
        if (!schedule.warm_start) {
            ModelSpec spec = model_spec;
            spec.init_seed = stage_seed(model_spec.init_seed, stage);
            model = make_model(spec, working);
        }
        model = train(working, background_pool, std::move(model), stage_config,
                      augment_config);

        StageLog log;
        log.stage = stage;
        log.model_checksum = model_checksum(model);
        for (auto& [rec, labels] : working) {
            const std::vector<ScoredBox> preds =
                predict(rec.pixels, model, schedule.merge_score, schedule.merge_iou);
            labels = merge_labels(labels, preds, schedule.merge_score, schedule.merge_iou,
                                  stage);
            const PropagationQuality q =
                propagation_quality(labels, rec.boxes, schedule.quality_iou);
            log.per_image.push_back({stage, rec.image_id, q.expanded, q.correct});
        }
        result.logs.push_back(std::move(log));

        if (!snapshot_dir.empty()) {
            std::vector<LabelSet> sets;
            for (const auto& [rec, labels] : working) {
                sets.push_back(labels);
            }
            save_label_sets(sets, (fs::path(snapshot_dir) /
                                   ("labels_stage_" + std::to_string(stage + 1) + ".jsonl"))
                                      .string());
            save_stage_logs(result.logs,
                            (fs::path(snapshot_dir) / "stage_log.jsonl").string());
        }
    }

    TrainConfig final_config = schedule.final_training;
    final_config.gated = false;  // all non-labeled regions are negatives
    if (!schedule.warm_start || schedule.num_stages == 0) {
        ModelSpec spec = model_spec;
        spec.init_seed = stage_seed(model_spec.init_seed, schedule.num_stages + 1);
        model = make_model(spec, working);
    }
    result.final_model =
        train(working, background_pool, std::move(model), final_config, augment_config);

    for (auto& [rec, labels] : working) {
        result.final_labels.push_back(std::move(labels));
    }
    return result;
}

std::pair<long long, std::vector<ScoredBox>> count_image(const Image& pixels,
                                                         const GridModel& model,
                                                         double threshold) {
    std::vector<ScoredBox> kept;
    for (const auto& sb : predict(pixels, model, threshold, 0.2)) {
        if (sb.score >= threshold) {
            kept.push_back(sb);
        }
    }
    return {static_cast<long long>(kept.size()), std::move(kept)};
}

void save_label_sets(const std::vector<LabelSet>& label_sets, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write label snapshot: " + path);
    }
    for (const auto& ls : label_sets) {
        json jboxes = json::array();
        for (const auto& lb : ls.boxes) {
            jboxes.push_back({{"x", lb.box.x},
                              {"y", lb.box.y},
                              {"w", lb.box.w},
                              {"h", lb.box.h},
                              {"provenance",
                               lb.provenance == Provenance::Seed ? "seed" : "propagated"},
                              {"stage", lb.stage}});
        }
        json j{{"image", ls.image_id}, {"stage", ls.stage}, {"boxes", jboxes}};
        out << j.dump() << "\n";
    }
}

std::vector<LabelSet> load_label_sets(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open label snapshot: " + path);
    }
    std::vector<LabelSet> sets;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        LabelSet ls;
        ls.image_id = j.at("image").get<std::string>();
        ls.stage = j.at("stage").get<int>();
        for (const auto& jb : j.at("boxes")) {
            LabeledBox lb;
            lb.box = {jb.at("x").get<double>(), jb.at("y").get<double>(),
                      jb.at("w").get<double>(), jb.at("h").get<double>()};
            lb.provenance = jb.at("provenance").get<std::string>() == "seed"
                                ? Provenance::Seed
                                : Provenance::Propagated;
            lb.stage = jb.at("stage").get<int>();
            ls.boxes.push_back(lb);
        }
        sets.push_back(std::move(ls));
    }
    return sets;
}

void save_stage_logs(const std::vector<StageLog>& logs, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write stage log: " + path);
    }
    for (const auto& log : logs) {
        for (const auto& e : log.per_image) {
            json j{{"stage", e.stage},
                   {"image", e.image_id},
                   {"expanded", e.expanded},
                   {"correct", e.correct},
                   {"model_checksum", log.model_checksum}};
            out << j.dump() << "\n";
        }
    }
}

std::vector<StageLog> load_stage_logs(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open stage log: " + path);
    }
    std::map<int, StageLog> by_stage;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const json j = json::parse(line);
        StageLogEntry e{j.at("stage").get<int>(), j.at("image").get<std::string>(),
                        j.at("expanded").get<long long>(), j.at("correct").get<long long>()};
        StageLog& log = by_stage[e.stage];
        log.stage = e.stage;
        log.model_checksum = j.at("model_checksum").get<uint64_t>();
        log.per_image.push_back(std::move(e));
    }
    std::vector<StageLog> logs;
    for (auto& [stage, log] : by_stage) {
        logs.push_back(std::move(log));
    }
    return logs;
}

}  // namespace countgrid
