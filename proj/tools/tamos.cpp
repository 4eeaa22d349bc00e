// tamos: generate synthetic corpora, train, track, evaluate, and report.

#include "tamos/config.hpp"
#include "tamos/datakit.hpp"
#include "tamos/inference.hpp"
#include "tamos/metrics.hpp"
#include "tamos/network.hpp"
#include "tamos/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tamos;

namespace {

struct Options {
    std::string config_file;
    std::string data = "data";
    std::string out;
    std::string checkpoint = "model.json";
    std::string predictions = "predictions";
    std::string trace;
    bool full_scale = false;
    double min_seconds = 0.0;
    int max_objects = 10;
    int repeats = 3;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

// Flags first, then the config file on top.
void finalize(ProjectConfig& cfg, const Options& opt) {
    if (opt.full_scale) {
        const auto seed = cfg.network.seed;
        cfg.network = NetworkConfig::full_scale();
        cfg.network.seed = seed;
    }
    if (!opt.config_file.empty()) merge_config_file(cfg, opt.config_file);
}

int cmd_generate(ProjectConfig cfg, const Options& opt) {
    finalize(cfg, opt);
    const fs::path root = opt.out.empty() ? opt.data : opt.out;
    fs::create_directories(root);
    long long boxes = 0;
    for (int i = 0; i < cfg.sequences; ++i) {
        SynthConfig s = cfg.synth;
        s.seed = cfg.synth.seed + static_cast<std::uint64_t>(i);
        char name[32];
        std::snprintf(name, sizeof name, "seq_%03d", i);
        const GeneratedSequence g = generate_sequence(s, name);
        write_sequence(g.sequence, root);
        boxes += g.bookkeeping.present_boxes;
    }
    std::cout << "wrote " << cfg.sequences << " sequences (" << boxes << " boxes) to " << root.string() << '\n';
    return 0;
}

int cmd_train(ProjectConfig cfg, const Options& opt) {
    finalize(cfg, opt);
    TrainingSource source;
    source.sequences = read_corpus(opt.data);
    if (source.sequences.empty()) throw std::runtime_error("no sequences under " + opt.data);
    std::vector<TrainingSource> sources{std::move(source)};
    Network net(cfg.network);
    std::ofstream trace_file;
    std::ostream* trace = nullptr;
    if (!opt.trace.empty()) {
        trace_file.open(opt.trace, std::ios::app);
        if (!trace_file) throw std::runtime_error("cannot open trace " + opt.trace);
        trace = &trace_file;
    }
    const TrainSummary summary = train(net, sources, cfg.train, trace);
    save_checkpoint(net, opt.checkpoint);
    std::printf("steps %ld, loss %.4f -> %.4f%s, checkpoint %s\n", summary.steps, summary.first_loss,
                summary.last_loss, summary.stopped_by_budget ? " (time budget reached)" : "", opt.checkpoint.c_str());
    return 0;
}

int cmd_track(ProjectConfig cfg, const Options& opt) {
    finalize(cfg, opt);
    const Network net = load_checkpoint(opt.checkpoint);
    const Tracker tracker(net, cfg.tracker);
    const fs::path out = opt.out.empty() ? opt.predictions : opt.out;
    fs::create_directories(out);
    for (const auto& dir : list_sequences(opt.data)) {
        const Sequence seq = read_sequence(dir);
        const auto records = run_sequence(tracker, seq);
        write_predictions(records, out / (seq.name + ".txt"));
        std::cout << seq.name << ": " << seq.frames.size() << " frames\n";
    }
    return 0;
}

int cmd_eval(ProjectConfig cfg, const Options& opt) {
    finalize(cfg, opt);
    std::vector<TrackResult> results;
    for (const auto& dir : list_sequences(opt.data)) {
        const std::string name = dir.filename().string();
        const fs::path pred_path = fs::path(opt.predictions) / (name + ".txt");
        if (!fs::exists(pred_path)) throw std::runtime_error("missing predictions " + pred_path.string());
        const AnnotationFile gt = read_annotations(dir / "annotations.txt");
        const auto records = read_predictions(pred_path);
        for (const auto& t : match_tracks(name, gt, records)) results.push_back(evaluate_track(t));
    }
    const Report report = aggregate_report(results);
    std::cout << format_report_tsv(report);
    if (!opt.out.empty()) {
        const fs::path out = opt.out;
        fs::create_directories(out);
        write_text(out / "report.tsv", format_report_tsv(report));
        write_text(out / "tracks.tsv", format_tracks_tsv(report));
        write_text(out / "success.tsv", success_series_tsv(report));
        write_text(out / "pr.tsv", pr_series_tsv(report));
        write_text(out / "success.svg", success_plot_svg(report));
        write_text(out / "pr.svg", pr_plot_svg(report));
    }
    return 0;
}

int cmd_stats(ProjectConfig cfg, const Options& opt) {
    finalize(cfg, opt);
    std::vector<AnnotationFile> files;
    for (const auto& dir : list_sequences(opt.data)) {
        AnnotationFile f = read_annotations(dir / "annotations.txt");
        if (opt.min_seconds > 0.0) f = filter_short_tracks(f, opt.min_seconds);
        files.push_back(std::move(f));
    }
    std::cout << format_stats_table(dataset_stats(files));
    return 0;
}

int cmd_bench(ProjectConfig cfg, const Options& opt) {
    finalize(cfg, opt);
    const Network net = fs::exists(opt.checkpoint) ? load_checkpoint(opt.checkpoint) : Network(cfg.network);
    const NetworkConfig& nc = net.config();
    SynthConfig s = cfg.synth;
    s.image_height = nc.image_height;
    s.image_width = nc.image_width;
    s.object_count = opt.max_objects;
    s.frames = 2;
    s.min_size = 12.0;
    s.max_size = 24.0;
    const Sequence seq = generate_sequence(s).sequence;
    std::vector<Box> boxes;
    for (const auto& t : seq.annotations.tracks) {
        boxes.push_back(t.boxes.front().value_or(Box{10.0, 10.0, 20.0, 20.0}));
    }
    const Tracker tracker(net, cfg.tracker);
    std::printf("objects\tjoint_mops\tjoint_ms\tjoint_fps\tindependent_mops\tindependent_ms\tindependent_fps\n");
    FrameCost base{};
    for (int n = 1; n <= opt.max_objects; ++n) {
        const std::span<const Box> sub(boxes.data(), static_cast<std::size_t>(n));
        const FrameCost joint = measure_frame_cost(tracker, seq.frames[0], seq.frames[1], sub, false, opt.repeats);
        const FrameCost indep = measure_frame_cost(tracker, seq.frames[0], seq.frames[1], sub, true, opt.repeats);
        if (n == 1) base = joint;
        std::printf("%d\t%.2f\t%.2f\t%.1f\t%.2f\t%.2f\t%.1f\n", n, joint.ops / 1e6, joint.seconds * 1e3,
                    1.0 / joint.seconds, indep.ops / 1e6, indep.seconds * 1e3, 1.0 / indep.seconds);
    }
    (void)base;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint multi-object generic tracker: data, training, tracking and evaluation"};
    app.require_subcommand(1);
    ProjectConfig cfg;
    Options opt;

    auto add_config = [&](CLI::App* c) {
        c->add_option("-c,--config", opt.config_file, "JSON config file; its values override flags")
            ->check(CLI::ExistingFile);
    };
    auto add_network = [&](CLI::App* c) {
        c->add_flag("--full-scale", opt.full_scale, "384x576 input, 256 channels, 8 heads");
        c->add_option("--pool-size", cfg.network.pool_size, "Embedding pool size m");
        c->add_option("--channels", cfg.network.channels, "Model width c");
        c->add_option("--decoder-layers", cfg.network.decoder_layers, "Transformer decoder layers");
        c->add_option("--model-seed", cfg.network.seed, "Parameter initialisation seed");
    };

    auto* gen = app.add_subcommand("generate", "Render a synthetic multi-object corpus");
    add_config(gen);
    gen->add_option("-o,--out", opt.out, "Corpus root (default: --data)");
    gen->add_option("-d,--data", opt.data, "Corpus root");
    gen->add_option("-n,--sequences", cfg.sequences, "Number of sequences");
    gen->add_option("--objects", cfg.synth.object_count, "Objects per sequence");
    gen->add_option("--frames", cfg.synth.frames, "Frames per sequence");
    gen->add_option("--fps", cfg.synth.fps, "Annotation frame rate");
    gen->add_option("--height", cfg.synth.image_height, "Frame height");
    gen->add_option("--width", cfg.synth.image_width, "Frame width");
    gen->add_option("--seed", cfg.synth.seed, "Seed of the first sequence (sequence i uses seed + i)");
    gen->add_option("--max-speed", cfg.synth.max_speed, "Largest speed in px/frame");
    gen->add_flag("--distractors", cfg.synth.distractors, "All objects share shape and colour");

    auto* tr = app.add_subcommand("train", "Train a model on a corpus");
    add_config(tr);
    add_network(tr);
    tr->add_option("-d,--data", opt.data, "Training corpus root");
    tr->add_option("-o,--checkpoint", opt.checkpoint, "Checkpoint to write");
    tr->add_option("--trace", opt.trace, "Append one JSON line per step to this file");
    tr->add_option("--epochs", cfg.train.schedule.epochs, "Epochs");
    tr->add_option("--steps-per-epoch", cfg.train.schedule.steps_per_epoch, "Optimiser steps per epoch");
    tr->add_option("--batch-size", cfg.train.schedule.batch_size, "Pairs per step");
    tr->add_option("--lr", cfg.train.schedule.learning_rate, "Initial learning rate");
    tr->add_option("--seed", cfg.train.seed, "Sampling seed");
    tr->add_option("--time-budget", cfg.train.time_budget_seconds, "Stop after this many seconds (0: no limit)");
    tr->add_flag("!--no-augment", cfg.train.sampler.augment.enabled, "Disable augmentation");
    tr->add_flag("!--no-coupling", cfg.train.loss.coupling_term, "Drop the unused-embedding loss term");

    auto* tk = app.add_subcommand("track", "Run the tracker over every sequence of a corpus");
    add_config(tk);
    tk->add_option("-m,--checkpoint", opt.checkpoint, "Model checkpoint");
    tk->add_option("-d,--data", opt.data, "Corpus root");
    tk->add_option("-o,--out", opt.out, "Prediction directory (default: --predictions)");
    tk->add_option("-p,--predictions", opt.predictions, "Prediction directory");
    tk->add_option("--tau", cfg.tracker.memory_threshold, "Memory update threshold");
    tk->add_flag("!--no-memory", cfg.tracker.memory_update, "Never replace the dynamic frame");
    tk->add_flag("--zoom", cfg.tracker.zoom, "Zoom on small targets (single-object sequences)");
    tk->add_option("--report-threshold", cfg.tracker.report_threshold, "Presence needed to report a box");

    auto* ev = app.add_subcommand("eval", "Score predictions against annotations");
    add_config(ev);
    ev->add_option("-d,--data", opt.data, "Corpus root with annotations");
    ev->add_option("-p,--predictions", opt.predictions, "Prediction directory");
    ev->add_option("-o,--out", opt.out, "Write report tables, plot data and SVG plots here");

    auto* st = app.add_subcommand("stats", "Dataset statistics table");
    add_config(st);
    st->add_option("-d,--data", opt.data, "Corpus root");
    st->add_option("--min-seconds", opt.min_seconds, "Drop tracks shorter than this first (0: keep all)");

    auto* bn = app.add_subcommand("bench", "Per-frame cost versus object count, joint and independent");
    add_config(bn);
    add_network(bn);
    bn->add_option("-m,--checkpoint", opt.checkpoint, "Model checkpoint (random weights if missing)");
    bn->add_option("--max-objects", opt.max_objects, "Largest object count")->check(CLI::Range(1, 64));
    bn->add_option("--repeats", opt.repeats, "Timing repeats (minimum is reported)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_generate(cfg, opt);
        if (*tr) return cmd_train(cfg, opt);
        if (*tk) return cmd_track(cfg, opt);
        if (*ev) return cmd_eval(cfg, opt);
        if (*st) return cmd_stats(cfg, opt);
        if (*bn) return cmd_bench(cfg, opt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
