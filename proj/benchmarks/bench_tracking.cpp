#include "tamos/datakit.hpp"
#include "tamos/inference.hpp"
#include "tamos/metrics.hpp"

#include <benchmark/benchmark.h>

#include <memory>

using namespace tamos;

namespace {

struct Scene {
    Network net{NetworkConfig::toy()};
    Sequence seq;
    std::vector<Box> boxes;

    Scene() {
        SynthConfig sc;
        sc.object_count = 10;
        sc.frames = 2;
        sc.min_size = 16;
        sc.max_size = 24;
        sc.seed = 4;
        seq = generate_sequence(sc).sequence;
        for (const auto& t : seq.annotations.tracks) boxes.push_back(t.boxes[0].value_or(Box{5, 5, 20, 20}));
    }
};

Scene& scene() {
    static Scene s;
    return s;
}

TrackerConfig no_memory() {
    TrackerConfig c;
    c.memory_update = false;
    return c;
}

// One joint pass for n objects.
void BM_TrackFrameJoint(benchmark::State& state) {
    Scene& s = scene();
    const Tracker tracker(s.net, no_memory());
    const auto n = static_cast<std::size_t>(state.range(0));
    const TrackerState init = tracker.init(s.seq.frames[0], std::span<const Box>(s.boxes.data(), n));
    for (auto _ : state) benchmark::DoNotOptimize(tracker.track_frame(init, s.seq.frames[1]));
    state.counters["objects"] = static_cast<double>(n);
}
BENCHMARK(BM_TrackFrameJoint)->Arg(1)->Arg(2)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

// n single-object trackers, one pass each.
void BM_TrackFrameIndependent(benchmark::State& state) {
    Scene& s = scene();
    const Tracker tracker(s.net, no_memory());
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<TrackerState> states;
    for (std::size_t i = 0; i < n; ++i) states.push_back(tracker.init(s.seq.frames[0], std::span<const Box>(&s.boxes[i], 1)));
    for (auto _ : state) {
        for (const auto& st : states) benchmark::DoNotOptimize(tracker.track_frame(st, s.seq.frames[1]));
    }
    state.counters["objects"] = static_cast<double>(n);
}
BENCHMARK(BM_TrackFrameIndependent)->Arg(1)->Arg(2)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_TrackerInit(benchmark::State& state) {
    Scene& s = scene();
    const Tracker tracker(s.net, {});
    for (auto _ : state) benchmark::DoNotOptimize(tracker.init(s.seq.frames[0], s.boxes));
}
BENCHMARK(BM_TrackerInit)->Unit(benchmark::kMillisecond);

void BM_EvaluateTrack(benchmark::State& state) {
    SynthConfig sc;
    sc.object_count = 1;
    sc.frames = static_cast<int>(state.range(0));
    sc.image_height = 64;
    sc.image_width = 96;
    sc.min_size = 10;
    sc.max_size = 20;
    const auto ann = generate_sequence(sc).sequence.annotations;
    EvalTrack t{"s", 0, ann.tracks[0].boxes, {}};
    for (std::size_t i = 0; i < t.gt.size(); ++i) {
        const Box g = t.gt[i].value_or(Box{0, 0, 10, 10});
        t.pred.push_back(ScoredBox{Box{g.x + 1.5, g.y - 1, g.w, g.h}, 0.01 * static_cast<double>(i % 100), true});
    }
    for (auto _ : state) benchmark::DoNotOptimize(evaluate_track(t));
}
BENCHMARK(BM_EvaluateTrack)->Arg(300)->Arg(3000);

}  // namespace

BENCHMARK_MAIN();
