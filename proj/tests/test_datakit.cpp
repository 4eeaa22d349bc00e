#include "tamos/datakit.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace tamos;

namespace {

TrackAnnotation track(int id, std::string label, int frames, int first, int last) {
    TrackAnnotation t{id, std::move(label), {}};
    for (int f = 0; f < frames; ++f) {
        if (f >= first && f <= last) {
            t.boxes.push_back(Box{1.0 * f, 2.0, 10, 12});
        } else {
            t.boxes.push_back(std::nullopt);
        }
    }
    return t;
}

SynthObject object_at(double x, double y, MotionKind m, double vx = 0, double vy = 0) {
    SynthObject o;
    o.x = x;
    o.y = y;
    o.width = 20;
    o.height = 16;
    o.motion = m;
    o.vx = vx;
    o.vy = vy;
    o.label = "red-rectangle";
    return o;
}

}  // namespace

TEST(Annotations, RoundTripIsExact) {
    AnnotationFile f;
    f.fps = 29.97;
    f.frame_count = 4;
    f.tracks.push_back(track(3, "car", 4, 1, 2));
    f.tracks.push_back(track(8, "red circle", 4, 0, 3));
    f.tracks[1].boxes[2] = Box{0.1 + 0.2, 1.0 / 3.0, 1e-3, 12345.678901234567};
    EXPECT_EQ(parse_annotations(serialize_annotations(f)), f);
    const auto path = std::filesystem::temp_directory_path() / "tamos_ann_test.txt";
    write_annotations(f, path);
    EXPECT_EQ(read_annotations(path), f);
    std::filesystem::remove(path);
}

TEST(Annotations, ParseErrors) {
    const std::string head = "# tamos-annotations v1\n# fps=10\n# frames=2\n# object=1,a\n";
    EXPECT_NO_THROW(parse_annotations(head + "0,1,1,2,3,4\n1,1,absent\n"));
    EXPECT_THROW(parse_annotations(head + "0,2,1,2,3,4\n"), std::runtime_error);   // undeclared
    EXPECT_THROW(parse_annotations(head + "5,1,1,2,3,4\n"), std::runtime_error);   // frame range
    EXPECT_THROW(parse_annotations(head + "0,1,1,2,0,4\n"), std::runtime_error);   // empty box
    EXPECT_THROW(parse_annotations(head + "0,1,1,2,x,4\n"), std::runtime_error);   // number
    EXPECT_THROW(parse_annotations(head + "0,1,gone\n"), std::runtime_error);
    EXPECT_THROW(parse_annotations(head + "0,1,1,2\n"), std::runtime_error);
    EXPECT_THROW(parse_annotations(head + "# object=1,b\n"), std::runtime_error);  // duplicate id
    EXPECT_THROW(parse_annotations("0,1,1,2,3,4\n"), std::runtime_error);           // no header
    EXPECT_THROW(read_annotations("/nonexistent/tamos.txt"), std::runtime_error);
}

TEST(Generator, StaticObjectKeepsItsBox) {
    SynthConfig cfg;
    cfg.frames = 5;
    cfg.objects = {object_at(30, 40, MotionKind::Static)};
    const auto g = generate_sequence(cfg);
    for (const auto& b : g.sequence.annotations.tracks[0].boxes) {
        ASSERT_TRUE(b.has_value());
        EXPECT_EQ(*b, (Box{30, 40, 20, 16}));
    }
    // Object pixels carry its colour.
    const Image& img = g.sequence.frames[0];
    EXPECT_EQ(img.pixels(img.index(48, 40), 0), 1.0);
    EXPECT_EQ(img.pixels(img.index(48, 40), 1), 0.0);
}

TEST(Generator, LinearMotionWithoutBounce) {
    SynthConfig cfg;
    cfg.frames = 6;
    cfg.bounce = false;
    cfg.objects = {object_at(10, 20, MotionKind::Linear, 2.5, -1.0)};
    const auto g = generate_sequence(cfg);
    for (int f = 0; f < 6; ++f) {
        EXPECT_EQ(*g.sequence.annotations.tracks[0].boxes[static_cast<std::size_t>(f)],
                  (Box{10 + 2.5 * f, 20 - 1.0 * f, 20, 16}));
    }
}

TEST(Generator, BounceKeepsObjectsInside) {
    SynthConfig cfg;
    cfg.frames = 80;
    cfg.max_speed = 6;
    cfg.object_count = 3;
    cfg.seed = 11;
    const auto g = generate_sequence(cfg);
    for (const auto& t : g.sequence.annotations.tracks) {
        for (const auto& b : t.boxes) {
            if (!b) continue;
            EXPECT_GE(b->x, -1e-9);
            EXPECT_GE(b->y, -1e-9);
            EXPECT_LE(b->right(), cfg.image_width + 1e-9);
            EXPECT_LE(b->bottom(), cfg.image_height + 1e-9);
        }
    }
}

TEST(Generator, OcclusionAndOutOfViewSchedule) {
    SynthConfig cfg;
    cfg.frames = 12;
    cfg.objects = {object_at(30, 40, MotionKind::Static), object_at(120, 60, MotionKind::Static)};
    cfg.occlusions = {{0, 3, 6}};
    cfg.out_of_view = {{1, 8, 10}};
    const auto g = generate_sequence(cfg);
    const auto& a = g.sequence.annotations.tracks[0].boxes;
    const auto& b = g.sequence.annotations.tracks[1].boxes;
    for (int f = 0; f < 12; ++f) {
        EXPECT_EQ(a[static_cast<std::size_t>(f)].has_value(), f < 3 || f >= 6) << f;
        EXPECT_EQ(b[static_cast<std::size_t>(f)].has_value(), f < 8 || f >= 10) << f;
    }
    EXPECT_EQ(g.bookkeeping.present_boxes, 24 - 3 - 2);
}

TEST(Generator, DeterministicPerSeed) {
    SynthConfig cfg;
    cfg.seed = 42;
    cfg.frames = 4;
    const auto a = generate_sequence(cfg), b = generate_sequence(cfg);
    EXPECT_EQ(serialize_annotations(a.sequence.annotations), serialize_annotations(b.sequence.annotations));
    for (std::size_t f = 0; f < a.sequence.frames.size(); ++f) {
        EXPECT_TRUE(a.sequence.frames[f].pixels == b.sequence.frames[f].pixels);
    }
    cfg.seed = 43;
    EXPECT_NE(serialize_annotations(generate_sequence(cfg).sequence.annotations),
              serialize_annotations(a.sequence.annotations));
}

TEST(Generator, RandomObjectsRespectSizeRange) {
    SynthConfig cfg;
    cfg.object_count = 8;
    for (const auto& o : random_objects(cfg)) {
        EXPECT_GE(o.width, cfg.min_size);
        EXPECT_LE(o.width, cfg.max_size);
        EXPECT_GE(o.height, cfg.min_size);
        EXPECT_LE(o.height, cfg.max_size);
        EXPECT_FALSE(o.label.empty());
    }
}

TEST(Generator, DistractorsShareAppearance) {
    SynthConfig cfg;
    cfg.object_count = 3;
    cfg.distractors = true;
    const auto objs = random_objects(cfg);
    for (const auto& o : objs) {
        EXPECT_EQ(o.color, objs[0].color);
        EXPECT_EQ(o.shape, objs[0].shape);
    }
}

TEST(FilterShortTracks, Thresholds) {
    AnnotationFile f;
    f.fps = 10;
    f.frame_count = 60;
    f.tracks = {track(0, "a", 60, 0, 29),   // 3 s
                track(1, "b", 60, 5, 45),   // 4.1 s
                track(2, "c", 60, 10, 49),  // exactly 4 s
                track(3, "d", 60, 99, 99)};  // never present
    const AnnotationFile kept = filter_short_tracks(f, 4.0);
    ASSERT_EQ(kept.tracks.size(), 2u);
    EXPECT_EQ(kept.tracks[0].object_id, 1);
    EXPECT_EQ(kept.tracks[1].object_id, 2);
    EXPECT_EQ(filter_short_tracks(kept, 4.0), kept);
    AnnotationFile empty = f;
    empty.tracks.clear();
    EXPECT_TRUE(filter_short_tracks(empty).tracks.empty());
    f.fps = 0;
    EXPECT_THROW(filter_short_tracks(f), std::invalid_argument);
}

TEST(DatasetStats, HandComputed) {
    AnnotationFile a;
    a.fps = 10;
    a.frame_count = 20;
    a.tracks = {track(0, "car", 20, 0, 19), track(1, "dog", 20, 5, 9)};
    AnnotationFile b;
    b.fps = 5;
    b.frame_count = 10;
    b.tracks = {track(0, "car", 10, 0, 3)};
    const std::vector<AnnotationFile> files{a, b};
    const DatasetStats s = dataset_stats(files);
    EXPECT_EQ(s.videos, 2);
    EXPECT_EQ(s.classes, 2);
    EXPECT_DOUBLE_EQ(s.avg_video_frames, 15.0);
    EXPECT_DOUBLE_EQ(s.avg_video_seconds, 2.0);
    EXPECT_DOUBLE_EQ(s.avg_tracks_per_video, 1.5);
    EXPECT_EQ(s.total_annotations, 29);
    EXPECT_DOUBLE_EQ(s.avg_track_boxes, 29.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.avg_track_seconds, (2.0 + 0.5 + 0.8) / 3.0);
    EXPECT_DOUBLE_EQ(s.avg_instances_per_frame, 29.0 / 30.0);
    EXPECT_EQ(s.annotation_fps, (std::vector<double>{5, 10}));
    EXPECT_NE(format_stats_table(s).find("5/10"), std::string::npos);
    EXPECT_EQ(dataset_stats(std::vector<AnnotationFile>{}).videos, 0);
}

TEST(DatasetStats, OrderInvariant) {
    std::vector<AnnotationFile> files;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.frames = 8;
        cfg.object_count = static_cast<int>(seed % 3) + 1;
        files.push_back(generate_sequence(cfg).sequence.annotations);
    }
    const DatasetStats a = dataset_stats(files);
    std::reverse(files.begin(), files.end());
    const DatasetStats b = dataset_stats(files);
    EXPECT_EQ(format_stats_table(a), format_stats_table(b));
    EXPECT_EQ(a.total_annotations, b.total_annotations);
}

TEST(DatasetStats, MatchesGeneratorBookkeeping) {
    std::vector<AnnotationFile> files;
    long long present = 0, frames = 0, tracks = 0;
    std::set<std::string> labels;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.frames = 10;
        cfg.object_count = 3;
        cfg.occlusions = {{0, 2, 4}};
        const auto g = generate_sequence(cfg);
        files.push_back(g.sequence.annotations);
        present += g.bookkeeping.present_boxes;
        frames += g.bookkeeping.frames;
        tracks += g.bookkeeping.tracks;
        labels.insert(g.bookkeeping.labels.begin(), g.bookkeeping.labels.end());
    }
    const DatasetStats s = dataset_stats(files);
    EXPECT_EQ(s.total_annotations, present);
    EXPECT_EQ(s.classes, static_cast<int>(labels.size()));
    EXPECT_DOUBLE_EQ(s.avg_video_frames, static_cast<double>(frames) / 5);
    EXPECT_DOUBLE_EQ(s.avg_tracks_per_video, static_cast<double>(tracks) / 5);
}

TEST(Corpus, WriteReadRoundTrip) {
    SynthConfig cfg;
    cfg.frames = 3;
    cfg.image_height = 32;
    cfg.image_width = 48;
    cfg.min_size = 8;
    cfg.max_size = 12;
    const auto g = generate_sequence(cfg, "clip");
    const auto root = std::filesystem::temp_directory_path() / "tamos_corpus_test";
    std::filesystem::remove_all(root);
    write_sequence(g.sequence, root);
    const auto seqs = read_corpus(root);
    ASSERT_EQ(seqs.size(), 1u);
    EXPECT_EQ(seqs[0].name, "clip");
    EXPECT_EQ(seqs[0].annotations, g.sequence.annotations);
    ASSERT_EQ(seqs[0].frames.size(), 3u);
    // PPM stores 8 bits per channel.
    EXPECT_LT((seqs[0].frames[1].pixels - g.sequence.frames[1].pixels).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
    std::filesystem::remove_all(root);
}
