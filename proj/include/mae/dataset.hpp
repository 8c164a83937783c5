#pragma once

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mae/png_io.hpp"
#include "mae/scene.hpp"

namespace mae {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kDatasetSchemaVersion = 1;

struct DatasetSpec {
    int identities = 16;
    int train_scenes = 200;
    int test_scenes = 80;
    SceneSpec scene;
    std::uint64_t seed = 1;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<SceneSample> scenes;  // train block first, then test

    std::vector<const SceneSample*> split(const std::string& name) const {
        std::vector<const SceneSample*> out;
        for (const auto& s : scenes)
            if (s.split == name) out.push_back(&s);
        return out;
    }
};

// Synthesizes the full dataset. A per-split "deck" seeds every identity into
// at least two scenes so each one is both trainable and queryable.
inline Dataset make_dataset(const DatasetSpec& spec) {
    if (spec.identities < 1) throw std::invalid_argument("make_dataset: need >= 1 identity");
    if (2 * spec.identities > spec.train_scenes * spec.scene.max_persons ||
        2 * spec.identities > spec.test_scenes * spec.scene.max_persons)
        throw std::invalid_argument("make_dataset: too few scenes to cover all identities twice");

    Dataset ds;
    ds.spec = spec;
    int next_scene_id = 0;
    for (const std::string split : {"train", "test"}) {
        int count = split == "train" ? spec.train_scenes : spec.test_scenes;
        auto rng = make_rng(derive_seed(spec.seed, 0xD5, split == "train" ? 1 : 2));
        std::uniform_int_distribution<int> ndist(spec.scene.min_persons, spec.scene.max_persons);
        std::vector<int> capacity(count);
        for (auto& n : capacity) n = std::min(ndist(rng), spec.identities);

        // two guaranteed placements per identity, spread over the fullest
        // remaining scenes so neither copy gets stranded
        std::vector<std::vector<int>> planned(count);
        std::vector<int> order(spec.identities);
        for (int i = 0; i < spec.identities; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (int id : order) {
            for (int copy = 0; copy < 2; ++copy) {
                int best = -1;
                for (int s = 0; s < count; ++s) {
                    if (static_cast<int>(planned[s].size()) >= capacity[s]) continue;
                    if (std::find(planned[s].begin(), planned[s].end(), id) != planned[s].end())
                        continue;
                    if (best < 0 || capacity[s] - static_cast<int>(planned[s].size()) >
                                        capacity[best] - static_cast<int>(planned[best].size()))
                        best = s;
                }
                if (best < 0) {
                    // every open scene already holds this id: grow the least
                    // loaded scene that lacks it
                    for (int s = 0; s < count; ++s) {
                        if (static_cast<int>(planned[s].size()) >= spec.scene.max_persons) continue;
                        if (std::find(planned[s].begin(), planned[s].end(), id) != planned[s].end())
                            continue;
                        if (best < 0 || planned[s].size() < planned[best].size()) best = s;
                    }
                    if (best >= 0) capacity[best] = static_cast<int>(planned[best].size()) + 1;
                }
                if (best >= 0) planned[best].push_back(id);
            }
        }
        for (int s = 0; s < count; ++s) {
            while (static_cast<int>(planned[s].size()) < capacity[s]) {
                int id = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.identities));
                if (std::find(planned[s].begin(), planned[s].end(), id) == planned[s].end())
                    planned[s].push_back(id);
            }
            ds.scenes.push_back(
                render_scene(spec.scene, planned[s], spec.seed, next_scene_id++, split));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk format: PNG rasters + JSON annotations + manifest with checksums
// ---------------------------------------------------------------------------

namespace dataset_detail {

inline std::string scene_stem(int scene_id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%06d", scene_id);
    return buf;
}

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t crc_of_files(const std::vector<fs::path>& paths) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& p : paths) {
        auto bytes = read_file_bytes(p);
        crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    }
    return static_cast<std::uint32_t>(crc);
}

inline json rect_json(const IntRect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }
inline IntRect rect_from(const json& j) { return {j[0], j[1], j[2], j[3]}; }
inline json rgb_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }
inline Rgb rgb_from(const json& j) {
    return {j[0].get<std::uint8_t>(), j[1].get<std::uint8_t>(), j[2].get<std::uint8_t>()};
}

}  // namespace dataset_detail

inline void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir / "scenes");
    json manifest;
    manifest["schema_version"] = kDatasetSchemaVersion;
    manifest["seed"] = ds.spec.seed;
    manifest["k"] = kBaseAttributes;
    manifest["attribute_names"] = kAttributeNames;
    manifest["identities"] = ds.spec.identities;
    manifest["image"] = {{"width", ds.spec.scene.width}, {"height", ds.spec.scene.height}};
    manifest["scene_spec"] = {{"min_persons", ds.spec.scene.min_persons},
                              {"max_persons", ds.spec.scene.max_persons},
                              {"clutter_shapes", ds.spec.scene.clutter_shapes},
                              {"noise_level", ds.spec.scene.noise_level}};
    manifest["counts"] = {{"train", ds.spec.train_scenes}, {"test", ds.spec.test_scenes}};
    json splits = {{"train", json::array()}, {"test", json::array()}};
    json checksums = json::object();

    for (const auto& s : ds.scenes) {
        std::string stem = dataset_detail::scene_stem(s.scene_id);
        fs::path img = dir / "scenes" / (stem + ".png");
        fs::path lab = dir / "scenes" / (stem + "_labels.png");
        fs::path msk = dir / "scenes" / (stem + "_mask.png");
        fs::path ann = dir / "scenes" / (stem + ".json");

        write_png_rgb(img.string(), s.image.data(), s.height, s.width);
        // palette index = attribute id + 1, 0 = none
        std::vector<std::uint8_t> idx(static_cast<std::size_t>(s.height) * s.width, 0);
        for (int c = 0; c < s.label_map.k; ++c) {
            const std::uint8_t* ch = s.label_map.channel(c);
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (ch[i]) idx[i] = static_cast<std::uint8_t>(c + 1);
        }
        write_png_indexed(lab.string(), idx.data(), s.height, s.width, s.label_map.k + 1);
        write_png_indexed(msk.string(), s.global_mask.data(), s.height, s.width, 2);

        json a;
        a["scene_id"] = s.scene_id;
        a["split"] = s.split;
        a["persons"] = json::array();
        for (const auto& p : s.persons) {
            json pj;
            pj["identity"] = p.identity;
            pj["box"] = {p.box.x1, p.box.y1, p.box.x2, p.box.y2};
            pj["visibility"] = p.visibility;
            json layout = json::array();
            for (const auto& r : p.part_layout) layout.push_back(dataset_detail::rect_json(r));
            pj["part_layout"] = layout;
            json colors = json::array();
            for (const auto& c : p.appearance.part_color)
                colors.push_back(dataset_detail::rgb_json(c));
            pj["appearance"] = {{"part_color", colors},
                                {"body_color", dataset_detail::rgb_json(p.appearance.body_color)},
                                {"has_bag", p.appearance.has_bag}};
            a["persons"].push_back(pj);
        }
        std::ofstream(ann) << a.dump(2) << "\n";

        splits[s.split].push_back(s.scene_id);
        checksums[stem] = dataset_detail::crc_of_files({img, lab, msk, ann});
    }
    manifest["splits"] = splits;
    manifest["checksums"] = checksums;
    std::ofstream(dir / "dataset.json") << manifest.dump(2) << "\n";
}

inline Dataset read_dataset(const fs::path& dir) {
    fs::path mpath = dir / "dataset.json";
    if (!fs::exists(mpath))
        throw std::runtime_error("dataset not found: " + mpath.string());
    json manifest = json::parse(dataset_detail::read_file_bytes(mpath));
    if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
        throw std::runtime_error("dataset schema version mismatch");

    Dataset ds;
    ds.spec.seed = manifest.at("seed");
    ds.spec.identities = manifest.at("identities");
    ds.spec.scene.width = manifest.at("image").at("width");
    ds.spec.scene.height = manifest.at("image").at("height");
    ds.spec.scene.min_persons = manifest.at("scene_spec").at("min_persons");
    ds.spec.scene.max_persons = manifest.at("scene_spec").at("max_persons");
    ds.spec.scene.clutter_shapes = manifest.at("scene_spec").at("clutter_shapes");
    ds.spec.scene.noise_level = manifest.at("scene_spec").at("noise_level");
    ds.spec.train_scenes = manifest.at("counts").at("train");
    ds.spec.test_scenes = manifest.at("counts").at("test");

    for (const std::string split : {"train", "test"}) {
        for (const auto& sid : manifest.at("splits").at(split)) {
            int scene_id = sid.get<int>();
            std::string stem = dataset_detail::scene_stem(scene_id);
            fs::path img = dir / "scenes" / (stem + ".png");
            fs::path lab = dir / "scenes" / (stem + "_labels.png");
            fs::path msk = dir / "scenes" / (stem + "_mask.png");
            fs::path ann = dir / "scenes" / (stem + ".json");
            std::uint32_t expect = manifest.at("checksums").at(stem).get<std::uint32_t>();
            std::uint32_t got = dataset_detail::crc_of_files({img, lab, msk, ann});
            if (got != expect)
                throw std::runtime_error("dataset checksum mismatch for " + stem);

            SceneSample s;
            s.scene_id = scene_id;
            s.split = split;
            s.image = read_png_rgb(img.string(), s.height, s.width);
            int lh = 0, lw = 0;
            auto idx = read_png_indexed(lab.string(), lh, lw);
            if (lh != s.height || lw != s.width)
                throw std::runtime_error("label map extent mismatch for " + stem);
            s.label_map = AttributeLabelMap::zeros(kBaseAttributes, s.height, s.width);
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (idx[i] > 0) {
                    if (idx[i] > kBaseAttributes)
                        throw std::runtime_error("corrupt label index in " + stem);
                    s.label_map.channels[(idx[i] - 1) * idx.size() + i] = 1;
                }
            int mh = 0, mw = 0;
            s.global_mask = read_png_indexed(msk.string(), mh, mw);
            if (mh != s.height || mw != s.width)
                throw std::runtime_error("mask extent mismatch for " + stem);

            json a = json::parse(dataset_detail::read_file_bytes(ann));
            for (const auto& pj : a.at("persons")) {
                PersonInstance p;
                p.identity = pj.at("identity");
                auto b = pj.at("box");
                p.box = {b[0], b[1], b[2], b[3]};
                for (int i = 0; i < kBaseAttributes; ++i) {
                    p.visibility[i] = pj.at("visibility")[i].get<bool>();
                    p.part_layout[i] = dataset_detail::rect_from(pj.at("part_layout")[i]);
                    p.appearance.part_color[i] =
                        dataset_detail::rgb_from(pj.at("appearance").at("part_color")[i]);
                }
                p.appearance.body_color =
                    dataset_detail::rgb_from(pj.at("appearance").at("body_color"));
                p.appearance.has_bag = pj.at("appearance").at("has_bag");
                s.persons.push_back(p);
            }
            ds.scenes.push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace mae
