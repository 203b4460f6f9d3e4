#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "countgrid/dataset.hpp"
#include "countgrid/errors.hpp"

using namespace countgrid;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("countgrid_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

SceneSpec small_spec() {
    SceneSpec spec;
    spec.image_size = 96;
    spec.objects_min = 4;
    spec.objects_max = 6;
    spec.object_size_min = 10;
    spec.object_size_max = 14;
    spec.rng_seed = 77;
    return spec;
}

}  // namespace

TEST_CASE("load_annotations on empty and simple files") {
    TempDir tmp;
    const auto ann = tmp.path / "annotations.jsonl";

    SUBCASE("empty file gives empty list") {
        std::ofstream(ann).close();
        CHECK(load_annotations(ann.string()).empty());
    }

    SUBCASE("round trip through save_dataset") {
        auto records = generate_scenes(small_spec(), 2);
        save_dataset(records, tmp.path.string());
        const auto loaded = load_annotations(ann.string());
        REQUIRE(loaded.size() == 2);
        CHECK(loaded[0].image_id == records[0].image_id);
        CHECK(loaded[0].boxes.size() == records[0].boxes.size());
        CHECK(loaded[0].pixels.width == 96);
    }

    SUBCASE("malformed line names the line number") {
        write_pnm(Image(8, 8, 1, 0.5), (tmp.path / "x.pgm").string());
        std::ofstream out(ann);
        out << "{\"image\": \"x.pgm\", \"width\": 8, \"height\": 8, \"boxes\": []}\n";
        out << "not json\n";
        out.close();
        try {
            load_annotations(ann.string());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }

    SUBCASE("zero-width box is rejected with the image id") {
        std::ofstream out(ann);
        out << R"({"image": "bad.pgm", "width": 8, "height": 8,)"
            << R"( "boxes": [{"x": 1, "y": 1, "w": 0, "h": 3}]})" << "\n";
        out.close();
        try {
            load_annotations(ann.string());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("bad") != std::string::npos);
        }
    }

    SUBCASE("out-of-bounds box is rejected") {
        std::ofstream out(ann);
        out << R"({"image": "oob.pgm", "width": 8, "height": 8,)"
            << R"( "boxes": [{"x": 5, "y": 1, "w": 6, "h": 3}]})" << "\n";
        out.close();
        CHECK_THROWS_AS(load_annotations(ann.string()), DataError);
    }
}

TEST_CASE("subsample specs") {
    auto records = generate_scenes(small_spec(), 8);

    SUBCASE("ALL/ALL keeps everything as seeds") {
        const auto result = subsample(records, {std::nullopt, std::nullopt, 1});
        CHECK(result.train.size() == 8);
        CHECK(result.discarded.empty());
        for (const auto& [rec, labels] : result.train) {
            CHECK(labels.boxes.size() == rec.boxes.size());
            for (const auto& lb : labels.boxes) {
                CHECK(lb.provenance == Provenance::Seed);
            }
        }
    }

    SUBCASE("C_i/C_a limits sizes and discards the rest") {
        const auto result = subsample(records, {3, 2, 5});
        CHECK(result.train.size() == 3);
        CHECK(result.discarded.size() == 5);
        for (const auto& [rec, labels] : result.train) {
            CHECK(labels.boxes.size() <= 2);
            CHECK(labels.stage == 1);
        }
    }

    SUBCASE("seed boxes come from the source record") {
        const auto result = subsample(records, {4, 3, 5});
        for (const auto& [rec, labels] : result.train) {
            for (const auto& lb : labels.boxes) {
                bool found = false;
                for (const auto& b : rec.boxes) {
                    if (b.x == lb.box.x && b.y == lb.box.y && b.w == lb.box.w &&
                        b.h == lb.box.h) {
                        found = true;
                        break;
                    }
                }
                CHECK(found);
            }
        }
    }

    SUBCASE("deterministic and input-order invariant") {
        const auto a = subsample(records, {2, std::nullopt, 7});
        auto reversed = records;
        std::reverse(reversed.begin(), reversed.end());
        const auto b = subsample(reversed, {2, std::nullopt, 7});
        REQUIRE(a.train.size() == b.train.size());
        for (size_t i = 0; i < a.train.size(); ++i) {
            CHECK(a.train[i].first.image_id == b.train[i].first.image_id);
            CHECK(a.train[i].second.boxes.size() == b.train[i].second.boxes.size());
        }
    }

    SUBCASE("too many requested images fails") {
        CHECK_THROWS_AS(subsample(records, {9, std::nullopt, 0}), DataError);
    }
}

TEST_CASE("scene generation") {
    const SceneSpec spec = small_spec();

    SUBCASE("count zero") { CHECK(generate_scenes(spec, 0).empty()); }

    SUBCASE("forced object count") {
        SceneSpec fixed = spec;
        fixed.objects_min = fixed.objects_max = 5;
        for (const auto& rec : generate_scenes(fixed, 3)) {
            CHECK(rec.boxes.size() == 5);
        }
    }

    SUBCASE("same seed reproduces bit-identical pixels") {
        const auto a = generate_scenes(spec, 3);
        const auto b = generate_scenes(spec, 3);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].pixels.data == b[i].pixels.data);
        }
    }

    SUBCASE("pairwise iou bound holds exactly") {
        for (const auto& rec : generate_scenes(spec, 4)) {
            for (size_t i = 0; i < rec.boxes.size(); ++i) {
                for (size_t j = i + 1; j < rec.boxes.size(); ++j) {
                    CHECK(iou(rec.boxes[i], rec.boxes[j]) <= spec.max_pairwise_iou);
                }
            }
        }
    }

    SUBCASE("boxes stay inside the image") {
        for (const auto& rec : generate_scenes(spec, 4)) {
            for (const auto& b : rec.boxes) {
                CHECK(b.x >= 0);
                CHECK(b.y >= 0);
                CHECK(b.x2() <= spec.image_size);
                CHECK(b.y2() <= spec.image_size);
            }
        }
    }

    SUBCASE("impossible density errors out") {
        SceneSpec dense = spec;
        dense.image_size = 32;
        dense.objects_min = dense.objects_max = 40;
        CHECK_THROWS_AS(generate_scenes(dense, 1), DataError);
    }
}

TEST_CASE("background pool") {
    const SceneSpec spec = small_spec();
    const auto pool = generate_background_pool(spec, 10);
    REQUIRE(pool.size() == 10);
    std::set<std::string> ids;
    for (const auto& rec : pool) {
        CHECK(rec.boxes.empty());
        CHECK(rec.pixels.width == spec.image_size);
        ids.insert(rec.image_id);
    }
    CHECK(ids.size() == 10);

    const auto again = generate_background_pool(spec, 10);
    for (size_t i = 0; i < pool.size(); ++i) {
        CHECK(pool[i].pixels.data == again[i].pixels.data);
    }
}
