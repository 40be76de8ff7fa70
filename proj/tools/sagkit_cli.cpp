#include "sagkit/baseline.hpp"
#include "sagkit/binary_io.hpp"
#include "sagkit/dataset.hpp"
#include "sagkit/errors.hpp"
#include "sagkit/formats.hpp"
#include "sagkit/manifest.hpp"
#include "sagkit/mask_optimizer.hpp"
#include "sagkit/metrics.hpp"
#include "sagkit/sag.hpp"
#include "sagkit/service.hpp"
#include "sagkit/srae.hpp"
#include "sagkit/toy_cnn.hpp"
#include "sagkit/training.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using namespace sagkit;

namespace {

constexpr int kUsageError = 2;

struct UsageError : Error {
    using Error::Error;
};

// Collects outputs under one directory and writes the manifest at the end.
class Run {
public:
    Run(std::string command, const std::vector<std::string>& argv, fs::path out)
        : out_(std::move(out)), start_(std::chrono::steady_clock::now()) {
        manifest_.command = std::move(command);
        manifest_.argv = argv;
        manifest_.working_directory = fs::current_path().string();
        fs::create_directories(out_);
    }

    RunManifest& manifest() { return manifest_; }
    fs::path path(const std::string& name) const { return out_ / name; }

    void text(const std::string& name, const std::string& body) {
        const fs::path p = path(name);
        fs::create_directories(p.parent_path());
        binio::write_text(p, body);
        manifest_.add_output(out_, p);
    }
    void png(const std::string& name, const Image& img) {
        const fs::path p = path(name);
        fs::create_directories(p.parent_path());
        write_png(p, img);
        manifest_.add_output(out_, p);
    }
    void existing(const fs::path& p) { manifest_.add_output(out_, p); }

    void finish() {
        manifest_.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_manifest(out_ / kManifestName, manifest_);
    }

private:
    fs::path out_;
    RunManifest manifest_;
    std::chrono::steady_clock::time_point start_;
};

int resolve_class(const ToyCnn& model, const Image& image, std::optional<int> requested) {
    if (requested) {
        if (*requested < 0 || *requested >= model.class_count())
            throw UsageError("--class must be in [0, " + std::to_string(model.class_count() - 1) + "]");
        return *requested;
    }
    const auto p = model.probabilities(image);
    return int(std::max_element(p.begin(), p.end()) - p.begin());
}

Image load_input(const ToyCnn& model, const fs::path& path) {
    Image img = read_png(path);
    if (img.shape() != model.input_shape())
        throw InputError(path.string() + " is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         "x" + std::to_string(img.channels()) + ", the model expects " +
                         std::to_string(model.input_shape().height) + "x" +
                         std::to_string(model.input_shape().width) + "x" +
                         std::to_string(model.input_shape().channels));
    return img;
}

std::string pretty(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- train-toy

struct TrainOpts {
    fs::path out;
    std::uint64_t seed = 7;
    SyntheticConfig data;
    TrainConfig train;
    bool dump_dataset = false;
    int fixtures = 0;
    std::uint64_t fixture_seed = 1234;
};

void add_train(CLI::App& app, TrainOpts& o) {
    app.add_option("--out", o.out, "Output directory")->required();
    app.add_option("--seed", o.seed, "Training seed")->capture_default_str();
    app.add_option("--data-seed", o.data.seed, "Synthetic dataset seed")->capture_default_str();
    app.add_option("--count", o.data.count, "Number of synthetic images")->capture_default_str();
    app.add_option("--classes", o.data.classes, "Class count (class 0 has no motif)")->capture_default_str();
    app.add_option("--epochs", o.train.epochs)->capture_default_str();
    app.add_option("--lr", o.train.learning_rate)->capture_default_str();
    app.add_option("--batch", o.train.batch_size)->capture_default_str();
    app.add_flag("--dump-dataset", o.dump_dataset, "Also write the training images and labels");
    app.add_option("--fixtures", o.fixtures, "Write this many fresh images to fixtures/")->capture_default_str();
    app.add_option("--fixture-seed", o.fixture_seed)->capture_default_str();
}

int run_train(const TrainOpts& o, const std::vector<std::string>& argv) {
    Run run("train-toy", argv, o.out);
    const SyntheticDataset ds = generate_synthetic(o.data);
    const TrainedModel tm = train_toy(ds, o.train, o.seed);
    tm.model.save(run.path("model.sfm"));
    run.existing(run.path("model.sfm"));
    const auto& r = tm.report;
    run.text("train_report.json", pretty({{"train_count", r.train_count},
                                          {"heldout_count", r.heldout_count},
                                          {"epochs", r.epochs},
                                          {"final_loss", r.final_loss},
                                          {"heldout_accuracy", r.heldout_accuracy}}));
    if (o.dump_dataset)
        for (const auto& p : dump_dataset(ds, run.path("dataset"))) run.existing(p);
    if (o.fixtures > 0) {
        SyntheticConfig fc = o.data;
        fc.count = o.fixtures;
        fc.seed = o.fixture_seed;
        for (const auto& p : dump_dataset(generate_synthetic(fc), run.path("fixtures"))) run.existing(p);
    }
    run.manifest().config = {{"count", o.data.count},
                             {"classes", o.data.classes},
                             {"epochs", o.train.epochs},
                             {"learning_rate", o.train.learning_rate},
                             {"batch_size", o.train.batch_size},
                             {"fixtures", o.fixtures}};
    run.manifest().seeds = {{"train", o.seed}, {"data", o.data.seed}, {"fixtures", o.fixture_seed}};
    run.finish();
    std::cout << "held-out accuracy " << r.heldout_accuracy << ", model written to " << run.path("model.sfm").string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------- explain

struct ExplainOpts {
    fs::path model, image, out;
    std::optional<int> class_index;
    std::string method = "igospp";
    std::string image_id;
    int resolution = 7;
    std::optional<double> lambda_l1, lambda_tv, lambda_ins, beta, btv_sigma, noise_sigma, initial_step, blur_sigma,
        epsilon;
    std::optional<int> ig_steps, iterations, curve_steps;
    std::uint64_t seed = 0;
};

void add_explain(CLI::App& app, ExplainOpts& o) {
    app.add_option("--model", o.model)->required()->check(CLI::ExistingFile);
    app.add_option("--image", o.image)->required()->check(CLI::ExistingFile);
    app.add_option("--out", o.out)->required();
    app.add_option("--class", o.class_index, "Class to explain (default: predicted class)");
    app.add_option("--method", o.method, "igospp, igos or mask2018")->capture_default_str();
    app.add_option("--image-id", o.image_id, "Id recorded in outputs (default: file stem)");
    app.add_option("--resolution", o.resolution)->capture_default_str();
    app.add_option("--lambda-l1", o.lambda_l1);
    app.add_option("--lambda-tv", o.lambda_tv);
    app.add_option("--lambda-ins", o.lambda_ins);
    app.add_option("--tv-beta", o.beta);
    app.add_option("--btv-sigma", o.btv_sigma);
    app.add_option("--noise-sigma", o.noise_sigma);
    app.add_option("--initial-step", o.initial_step);
    app.add_option("--ig-steps", o.ig_steps);
    app.add_option("--iterations", o.iterations);
    app.add_option("--curve-steps", o.curve_steps);
    app.add_option("--blur-sigma", o.blur_sigma);
    app.add_option("--epsilon", o.epsilon);
    app.add_option("--seed", o.seed)->capture_default_str();
}

int run_explain(const ExplainOpts& o, const std::vector<std::string>& argv) {
    const ToyCnn model = ToyCnn::load(o.model);
    const Image image = load_input(model, o.image);
    const int cls = resolve_class(model, image, o.class_index);
    const Method method = parse_method(o.method);
    OptimizerConfig cfg = OptimizerConfig::defaults(method, o.resolution);
    if (o.lambda_l1) cfg.lambda_l1 = *o.lambda_l1;
    if (o.lambda_tv) cfg.lambda_tv = *o.lambda_tv;
    if (o.lambda_ins) cfg.lambda_ins = *o.lambda_ins;
    if (o.beta) cfg.tv_beta = *o.beta;
    if (o.btv_sigma) cfg.btv_sigma = *o.btv_sigma;
    if (o.noise_sigma) cfg.noise_sigma = *o.noise_sigma;
    if (o.initial_step) cfg.initial_step = *o.initial_step;
    if (o.ig_steps) cfg.ig_steps = *o.ig_steps;
    if (o.iterations) cfg.max_iterations = *o.iterations;
    if (o.curve_steps) cfg.curve_steps = *o.curve_steps;
    if (o.blur_sigma) cfg.blur_sigma = *o.blur_sigma;
    if (o.epsilon) cfg.baseline_epsilon = *o.epsilon;
    cfg.seed = o.seed;

    Run run("explain", argv, o.out);
    run.manifest().add_input(o.model);
    run.manifest().add_input(o.image);
    const HeatmapResult res = optimize(model, image, cls, cfg, method);
    const std::string id = o.image_id.empty() ? o.image.stem().string() : o.image_id;
    run.text("heatmap.json", pretty(heatmap_result_to_json(res, id, cls)));
    run.png("heatmap.png", heatmap_image(res.heatmap, image.height(), image.width()));
    run.text("curves.csv", curves_csv(res.deletion, res.insertion));
    run.text("curves.svg", curves_svg(res.deletion, res.insertion));
    run.manifest().config = optimizer_config_to_json(cfg);
    run.manifest().config["method"] = to_string(method);
    run.manifest().config["class_index"] = cls;
    run.manifest().seeds = {{"optimizer", o.seed}};
    run.finish();
    std::cout << to_string(method) << " class " << cls << ": deletion auc " << res.deletion.auc << ", insertion auc "
              << res.insertion.auc << ", " << res.accepted_steps << " accepted steps\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOpts {
    fs::path model, image, heatmap, out;
    std::optional<int> class_index;
    int steps = kDefaultCurveSteps;
    double blur_sigma = kDefaultBlurSigma;
    double epsilon = kDefaultBaselineEpsilon;
    int random = 0;
    std::uint64_t seed = 0;
};

void add_evaluate(CLI::App& app, EvaluateOpts& o) {
    app.add_option("--model", o.model)->required()->check(CLI::ExistingFile);
    app.add_option("--image", o.image)->required()->check(CLI::ExistingFile);
    app.add_option("--heatmap", o.heatmap, "heatmap.json from explain, or a mask JSON of importances")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--out", o.out)->required();
    app.add_option("--class", o.class_index, "Class (default: the heatmap's class, else predicted)");
    app.add_option("--steps", o.steps)->capture_default_str();
    app.add_option("--blur-sigma", o.blur_sigma)->capture_default_str();
    app.add_option("--epsilon", o.epsilon)->capture_default_str();
    app.add_option("--random", o.random, "Random-heatmap reference trials")->capture_default_str();
    app.add_option("--seed", o.seed, "Seed for the random reference")->capture_default_str();
}

int run_evaluate(const EvaluateOpts& o, const std::vector<std::string>& argv) {
    const ToyCnn model = ToyCnn::load(o.model);
    const Image image = load_input(model, o.image);
    const Json hj = Json::parse(binio::read_text(o.heatmap));
    std::optional<int> cls_opt = o.class_index;
    if (!cls_opt && hj.contains("class_index")) cls_opt = hj["class_index"].get<int>();
    const int cls = resolve_class(model, image, cls_opt);
    const Mask heat = mask_from_json(hj.contains("heatmap") ? hj["heatmap"] : hj);
    const Mask full = upsample(heat, image.height(), image.width());
    const Baseline b = blur_baseline(image, o.blur_sigma, model, cls, o.epsilon);

    Run run("evaluate", argv, o.out);
    run.manifest().add_input(o.model);
    run.manifest().add_input(o.image);
    run.manifest().add_input(o.heatmap);
    const Curve del = deletion_curve(model, image, full, cls, o.steps, b.image);
    const Curve ins = insertion_curve(model, image, full, cls, o.steps, b.image);
    Json report = {{"class_index", cls},
                   {"deletion_auc", del.auc},
                   {"insertion_auc", ins.auc},
                   {"baseline_sigma", b.sigma},
                   {"baseline_confidence", b.confidence}};
    if (o.random > 0) {
        double rd = 0.0, ri = 0.0;
        for (int t = 0; t < o.random; ++t) {
            const Mask r = random_heatmap(image.height(), image.width(), o.seed + std::uint64_t(t));
            rd += deletion_curve(model, image, r, cls, o.steps, b.image).auc;
            ri += insertion_curve(model, image, r, cls, o.steps, b.image).auc;
        }
        report["random_deletion_auc"] = rd / o.random;
        report["random_insertion_auc"] = ri / o.random;
    }
    run.text("curves.csv", curves_csv(del, ins));
    run.text("curves.svg", curves_svg(del, ins));
    run.text("evaluation.json", pretty(report));
    run.manifest().config = {{"steps", o.steps}, {"blur_sigma", o.blur_sigma}, {"epsilon", o.epsilon},
                             {"random", o.random}, {"class_index", cls}};
    run.manifest().seeds = {{"random", o.seed}};
    run.finish();
    std::cout << "deletion auc " << del.auc << ", insertion auc " << ins.auc << "\n";
    return 0;
}

// ---------------------------------------------------------------- sag

struct SagOpts {
    fs::path model, image, out;
    std::optional<int> class_index;
    std::string image_id;
    SearchConfig search;
    int grid = 7;
    double blur_sigma = kDefaultBlurSigma;
    double epsilon = kDefaultBaselineEpsilon;
};

void add_search_options(CLI::App& app, SearchConfig& s, int& grid) {
    app.add_option("--grid", grid, "Patch grid is grid x grid")->capture_default_str();
    app.add_option("--beam", s.beam_width)->capture_default_str();
    app.add_option("--max-size", s.max_subset_size, "Largest subset searched")->capture_default_str();
    app.add_option("--tau", s.threshold_ratio, "Fraction of full-image confidence to keep")->capture_default_str();
    app.add_option("--overlap", s.diversity_overlap, "Max shared patches between roots")->capture_default_str();
    app.add_option("--max-roots", s.max_roots)->capture_default_str();
}

void add_sag(CLI::App& app, SagOpts& o) {
    app.add_option("--model", o.model)->required()->check(CLI::ExistingFile);
    app.add_option("--image", o.image)->required()->check(CLI::ExistingFile);
    app.add_option("--out", o.out)->required();
    app.add_option("--class", o.class_index);
    app.add_option("--image-id", o.image_id);
    add_search_options(app, o.search, o.grid);
    app.add_option("--blur-sigma", o.blur_sigma)->capture_default_str();
    app.add_option("--epsilon", o.epsilon)->capture_default_str();
}

Json search_json(const SearchConfig& s) {
    return {{"grid_rows", s.grid_rows},
            {"grid_cols", s.grid_cols},
            {"beam_width", s.beam_width},
            {"max_subset_size", s.max_subset_size},
            {"threshold_ratio", s.threshold_ratio},
            {"diversity_overlap", s.diversity_overlap},
            {"max_roots", s.max_roots}};
}

int run_sag(SagOpts o, const std::vector<std::string>& argv) {
    o.search.grid_rows = o.search.grid_cols = o.grid;
    o.search.validate();
    const ToyCnn model = ToyCnn::load(o.model);
    const Image image = load_input(model, o.image);
    const int cls = resolve_class(model, image, o.class_index);
    const Baseline b = blur_baseline(image, o.blur_sigma, model, cls, o.epsilon);
    const std::string id = o.image_id.empty() ? o.image.stem().string() : o.image_id;

    Run run("sag", argv, o.out);
    run.manifest().add_input(o.model);
    run.manifest().add_input(o.image);
    const SubsetScorer scorer(model, image, b.image, cls, o.grid, o.grid);
    const auto mses = beam_search_mse(scorer, o.search);
    const auto roots = diverse_roots(mses, o.search.diversity_overlap, o.search.max_roots);
    const Sag sag = build_sag(scorer, roots, id);
    if (mses.empty()) run.manifest().notes.push_back("no MSE found within max_subset_size");
    run.text(id + ".sag.json", pretty(sag_to_json(sag)));
    run.text(id + ".dot", sag_to_dot(sag));
    run.text(id + ".mses.json", pretty({{"image_id", id},
                                        {"class_index", cls},
                                        {"full_confidence", scorer.full_confidence()},
                                        {"baseline_confidence", scorer.confidence_of(PatchSubset(o.grid * o.grid))},
                                        {"mses", mse_records_to_json(mses)},
                                        {"diverse", mse_records_to_json(roots)}}));
    run.manifest().config = search_json(o.search);
    run.manifest().config["class_index"] = cls;
    run.manifest().config["blur_sigma"] = o.blur_sigma;
    run.manifest().config["epsilon"] = o.epsilon;
    run.finish();
    std::cout << mses.size() << " MSEs, " << roots.size() << " diverse roots, SAG with " << sag.nodes.size()
              << " nodes and " << sag.edges.size() << " edges\n";
    return 0;
}

// ---------------------------------------------------------------- stats

struct StatsOpts {
    fs::path model, images, out;
    int count = 200;
    std::uint64_t data_seed = 99;
    int limit = 20;
    SearchConfig search;
    int grid = 7;
    double blur_sigma = kDefaultBlurSigma;
    double epsilon = kDefaultBaselineEpsilon;
};

void add_stats(CLI::App& app, StatsOpts& o) {
    app.add_option("--model", o.model)->required()->check(CLI::ExistingFile);
    app.add_option("--images", o.images, "Directory with labels.csv (as written by train-toy)")
        ->check(CLI::ExistingDirectory);
    app.add_option("--count", o.count, "Synthetic corpus size when --images is absent")->capture_default_str();
    app.add_option("--data-seed", o.data_seed)->capture_default_str();
    app.add_option("--limit", o.limit, "Number of positive images to search")->capture_default_str();
    app.add_option("--out", o.out)->required();
    add_search_options(app, o.search, o.grid);
    app.add_option("--blur-sigma", o.blur_sigma)->capture_default_str();
    app.add_option("--epsilon", o.epsilon)->capture_default_str();
}

int run_stats(StatsOpts o, const std::vector<std::string>& argv) {
    o.search.grid_rows = o.search.grid_cols = o.grid;
    o.search.validate();
    const ToyCnn model = ToyCnn::load(o.model);
    Run run("stats", argv, o.out);
    run.manifest().add_input(o.model);

    struct Item {
        std::string id;
        Image image;
        int label;
    };
    std::vector<Item> items;
    if (!o.images.empty()) {
        const fs::path labels = o.images / "labels.csv";
        run.manifest().add_input(labels);
        std::istringstream in(binio::read_text(labels));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line) && int(items.size()) < o.limit) {
            const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos) throw InputError("malformed labels.csv row");
            const int label = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
            if (label == 0) continue;
            const fs::path p = o.images / line.substr(0, c1);
            run.manifest().add_input(p);
            items.push_back({p.stem().string(), load_input(model, p), label});
        }
    } else {
        SyntheticConfig sc;
        sc.count = o.count;
        sc.seed = o.data_seed;
        const SyntheticDataset ds = generate_synthetic(sc);
        for (std::size_t i = 0; i < ds.size() && int(items.size()) < o.limit; ++i)
            if (ds.labels[i] != 0) items.push_back({std::to_string(i), ds.images[i], ds.labels[i]});
    }
    if (items.empty()) throw InputError("no positive images to search");

    std::vector<ImageMseResult> results;
    std::string csv = "image_id,class_index,mse_count,diverse_count,smallest_size\n";
    for (const Item& it : items) {
        const Baseline b = blur_baseline(it.image, o.blur_sigma, model, it.label, o.epsilon);
        const SubsetScorer scorer(model, it.image, b.image, it.label, o.grid, o.grid);
        ImageMseResult r;
        r.mses = beam_search_mse(scorer, o.search);
        r.diverse = diverse_roots(r.mses, o.search.diversity_overlap, o.search.max_roots);
        csv += it.id + "," + std::to_string(it.label) + "," + std::to_string(r.mses.size()) + "," +
               std::to_string(r.diverse.size()) + "," +
               (r.mses.empty() ? std::string("") : std::to_string(r.mses.front().subset.size())) + "\n";
        if (r.mses.empty()) run.manifest().notes.push_back("no MSE found for image " + it.id);
        results.push_back(std::move(r));
    }
    const MseSummary summary = mse_statistics(results, o.search.max_subset_size);
    run.text("mse_summary.json", pretty(mse_summary_to_json(summary)));
    run.text("per_image.csv", csv);
    run.manifest().config = search_json(o.search);
    run.manifest().config["limit"] = o.limit;
    run.manifest().config["count"] = o.count;
    run.manifest().seeds = {{"data", o.data_seed}};
    run.finish();
    std::cout << summary.images << " images, " << 100.0 * summary.multiple_diverse_fraction
              << "% with >= 2 diverse MSEs\n";
    return 0;
}

// ---------------------------------------------------------------- xnn

struct XnnOpts {
    fs::path model, out;
    int class_index = 1;
    SraeHyperparameters hp;
    std::uint64_t seed = 0;
    int count = 600;
    std::uint64_t data_seed = 11;
    double heldout = 0.25;
};

void add_xnn(CLI::App& app, XnnOpts& o) {
    app.add_option("--model", o.model, "Scorer whose hidden layer is explained")->required()->check(CLI::ExistingFile);
    app.add_option("--out", o.out)->required();
    app.add_option("--class", o.class_index, "Class whose logit is y_hat")->capture_default_str();
    app.add_option("--n", o.hp.features, "Number of x-features")->capture_default_str();
    app.add_option("--beta", o.hp.beta)->capture_default_str();
    app.add_option("--eta", o.hp.eta)->capture_default_str();
    app.add_option("--q", o.hp.q)->capture_default_str();
    app.add_option("--lr", o.hp.learning_rate)->capture_default_str();
    app.add_option("--epochs", o.hp.max_epochs)->capture_default_str();
    app.add_option("--seed", o.seed)->capture_default_str();
    app.add_option("--count", o.count, "Synthetic images used as XNN data")->capture_default_str();
    app.add_option("--data-seed", o.data_seed)->capture_default_str();
    app.add_option("--heldout", o.heldout, "Held-out fraction")->capture_default_str();
}

int run_xnn(const XnnOpts& o, const std::vector<std::string>& argv) {
    const ToyCnn model = ToyCnn::load(o.model);
    if (o.class_index < 0 || o.class_index >= model.class_count()) throw UsageError("--class out of range");
    if (!(o.heldout > 0.0 && o.heldout < 1.0)) throw UsageError("--heldout must be in (0,1)");
    SyntheticConfig sc;
    sc.count = o.count;
    sc.seed = o.data_seed;
    sc.classes = model.class_count();
    const SyntheticDataset ds = generate_synthetic(sc);
    const std::size_t n_test = std::size_t(double(ds.size()) * o.heldout);
    const std::size_t n_train = ds.size() - n_test;
    XnnBatch train, test;
    train.dimension = test.dimension = model.arch().hidden;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        XnnBatch& b = i < n_train ? train : test;
        const auto z = model.hidden_activations(ds.images[i]);
        b.z.insert(b.z.end(), z.begin(), z.end());
        b.y_hat.push_back(model.logits(ds.images[i])[std::size_t(o.class_index)]);
    }

    Run run("xnn", argv, o.out);
    run.manifest().add_input(o.model);
    const SraeTrainResult res = train_srae(train, o.hp, o.seed);
    res.model.save(run.path("srae.bin"));
    run.existing(run.path("srae.bin"));
    const auto& l = res.final_loss;
    Json metrics = {{"epochs_run", res.epochs_run},
                    {"train_loss",
                     {{"faithfulness", l.faithfulness},
                      {"reconstruction", l.reconstruction},
                      {"pullaway", l.pullaway},
                      {"total", l.total}}},
                    {"heldout_faithfulness", faithfulness_to_json(faithfulness_metric(res.model, test))}};
    if (o.hp.features >= 2) metrics["heldout_orthogonality"] = orthogonality_metric(res.model, test);
    run.text("xnn_metrics.json", pretty(metrics));
    run.manifest().config = {{"class_index", o.class_index}, {"n", o.hp.features},  {"beta", o.hp.beta},
                             {"eta", o.hp.eta},                {"q", o.hp.q},          {"lr", o.hp.learning_rate},
                             {"epochs", o.hp.max_epochs},      {"count", o.count},     {"heldout", o.heldout}};
    run.manifest().seeds = {{"srae", o.seed}, {"data", o.data_seed}};
    run.finish();
    std::cout << pretty(metrics);
    return 0;
}

// ---------------------------------------------------------------- serve

struct ServeOpts {
    ServiceConfig cfg;
    fs::path out;
    bool self_test = false;
};

void add_serve(CLI::App& app, ServeOpts& o) {
    app.add_option("--model", o.cfg.model_path)->required()->check(CLI::ExistingFile);
    app.add_option("--images", o.cfg.image_dir, "Directory of <id>.png")->check(CLI::ExistingDirectory);
    app.add_option("--sags", o.cfg.sag_dir, "Directory of <id>.sag.json")->check(CLI::ExistingDirectory);
    app.add_option("--host", o.cfg.host)->capture_default_str();
    app.add_option("--port", o.cfg.port)->capture_default_str();
    app.add_option("--grid", o.cfg.default_grid, "Grid used when a request gives none")->capture_default_str();
    app.add_option("--blur-sigma", o.cfg.blur_sigma)->capture_default_str();
    app.add_option("--epsilon", o.cfg.baseline_epsilon)->capture_default_str();
    app.add_option("--out", o.out, "Write a manifest for this session here");
    app.add_flag("--self-test", o.self_test, "Bind a free port, query /health once and exit");
}

HttpService* g_service = nullptr;

extern "C" void on_signal(int) {
    if (g_service) g_service->stop();
}

int run_serve(ServeOpts o, const std::vector<std::string>& argv) {
    auto session = Session::load(o.cfg);
    if (!o.out.empty()) {
        Run run("serve", argv, o.out);
        run.manifest().add_input(o.cfg.model_path);
        run.manifest().config = {{"host", o.cfg.host},
                                 {"port", o.cfg.port},
                                 {"images", session->image_ids()},
                                 {"sags", session->sag_ids()},
                                 {"blur_sigma", o.cfg.blur_sigma},
                                 {"epsilon", o.cfg.baseline_epsilon}};
        run.finish();
    }
    HttpService service(session);
    const int port = service.bind(o.cfg.host, o.self_test ? 0 : o.cfg.port);
    if (o.self_test) {
        std::thread server([&] { service.listen(); });
        httplib::Client client(o.cfg.host, port);
        httplib::Result res;
        for (int attempt = 0; attempt < 50 && !res; ++attempt) {
            res = client.Get("/health");
            if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        service.stop();
        server.join();
        if (!res || res->status != 200) {
            std::cerr << "sagkit serve: /health did not answer\n";
            return 1;
        }
        std::cout << res->body << "\n";
        return 0;
    }
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "serving " << session->sag_ids().size() << " SAGs and " << session->image_ids().size()
              << " images on http://" << o.cfg.host << ":" << port << std::endl;
    service.listen();
    g_service = nullptr;
    return 0;
}

// ---------------------------------------------------------------- render

struct RenderOpts {
    fs::path model, image, heatmap, out;
    std::optional<int> class_index;
    std::string patches;
    int grid = 7;
    double blur_sigma = kDefaultBlurSigma;
    double epsilon = kDefaultBaselineEpsilon;
};

void add_render(CLI::App& app, RenderOpts& o) {
    app.add_option("--model", o.model)->required()->check(CLI::ExistingFile);
    app.add_option("--image", o.image)->required()->check(CLI::ExistingFile);
    app.add_option("--out", o.out)->required();
    app.add_option("--class", o.class_index);
    app.add_option("--patches", o.patches, "Comma-separated patches to keep, e.g. 3,10,24");
    app.add_option("--heatmap", o.heatmap, "Render this heatmap.json instead of a masked image")
        ->check(CLI::ExistingFile);
    app.add_option("--grid", o.grid)->capture_default_str();
    app.add_option("--blur-sigma", o.blur_sigma)->capture_default_str();
    app.add_option("--epsilon", o.epsilon)->capture_default_str();
}

int run_render(const RenderOpts& o, const std::vector<std::string>& argv) {
    const ToyCnn model = ToyCnn::load(o.model);
    const Image image = load_input(model, o.image);
    Run run("render", argv, o.out);
    run.manifest().add_input(o.model);
    run.manifest().add_input(o.image);
    if (!o.heatmap.empty()) {
        run.manifest().add_input(o.heatmap);
        const Json hj = Json::parse(binio::read_text(o.heatmap));
        run.png("heatmap.png",
                heatmap_image(mask_from_json(hj.contains("heatmap") ? hj["heatmap"] : hj), image.height(),
                              image.width()));
    } else {
        const int cls = resolve_class(model, image, o.class_index);
        const Baseline b = blur_baseline(image, o.blur_sigma, model, cls, o.epsilon);
        const PatchSubset s = parse_patch_list(o.patches, o.grid * o.grid);
        const Image masked = apply_mask(image, b.image, subset_to_mask(s, o.grid, o.grid), Upsampling::patch);
        run.png("masked.png", masked);
        const double conf = score(model, masked, cls);
        run.text("render.json", pretty({{"class_index", cls}, {"patches", s.members()}, {"confidence", conf}}));
        std::cout << "confidence " << conf << "\n";
    }
    run.manifest().config = {{"grid", o.grid}, {"patches", o.patches}, {"blur_sigma", o.blur_sigma}};
    run.finish();
    return 0;
}

// ---------------------------------------------------------------- dispatch

int dispatch(std::vector<std::string> args);

int run_replay(const fs::path& manifest_path, const fs::path& out) {
    const RunManifest m = read_manifest(manifest_path);
    for (const FileDigest& in : m.inputs)
        if (sha256_file(in.path) != in.sha256) {
            std::cerr << "sagkit replay: input changed since the run: " << in.path << "\n";
            return 1;
        }
    const fs::path target = fs::absolute(out);
    std::vector<std::string> args{"sagkit"};
    bool replaced = false;
    for (std::size_t i = 0; i < m.argv.size(); ++i) {
        if (m.argv[i] == "--out" && i + 1 < m.argv.size()) {
            args.push_back("--out");
            args.push_back(target.string());
            ++i;
            replaced = true;
        } else if (m.argv[i].rfind("--out=", 0) == 0) {
            args.push_back("--out=" + target.string());
            replaced = true;
        } else {
            args.push_back(m.argv[i]);
        }
    }
    if (!replaced) throw InputError("manifest argv has no --out to redirect");
    const fs::path here = fs::current_path();
    fs::current_path(m.working_directory);
    int status = 0;
    try {
        status = dispatch(args);
    } catch (...) {
        fs::current_path(here);
        throw;
    }
    fs::current_path(here);
    if (status != 0) return status;
    int mismatches = 0;
    for (const FileDigest& d : m.outputs) {
        const fs::path p = target / d.path;
        const bool same = fs::exists(p) && sha256_file(p) == d.sha256;
        if (!same) {
            ++mismatches;
            std::cout << "differs: " << d.path << "\n";
        }
    }
    std::cout << (m.outputs.size() - std::size_t(mismatches)) << "/" << m.outputs.size()
              << " outputs byte-identical\n";
    return mismatches == 0 ? 0 : 1;
}

// Lines of key=value from a subcommand's --config file become --key=value tokens
// placed before the user's own flags, so explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::size_t insert_at = 1;
    while (insert_at < args.size() && !args[insert_at].empty() && args[insert_at][0] != '-') ++insert_at;
    std::vector<std::string> rest;
    std::string config;
    for (std::size_t i = insert_at; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file");
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config.empty()) return args;
    std::vector<std::string> out(args.begin(), args.begin() + std::ptrdiff_t(insert_at));
    std::istringstream in(binio::read_text(config));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(config + ":" + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        out.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

int dispatch(std::vector<std::string> raw) {
    const std::vector<std::string> args = expand_config(raw);
    CLI::App app{"Perturbation-based explanations, minimal sufficient explanations and SAGs for image classifiers",
                 "sagkit"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", kToolVersion);
    std::string config_unused;
    auto with_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_unused, "key=value file; command-line flags take precedence");
        return sub;
    };

    TrainOpts train;
    add_train(*with_config(app.add_subcommand("train-toy", "Generate the synthetic corpus and train the toy CNN")),
              train);
    ExplainOpts explain;
    add_explain(*with_config(app.add_subcommand("explain", "Optimise a heatmap (iGOS++, I-GOS or mask2018)")),
                explain);
    EvaluateOpts evaluate;
    add_evaluate(*with_config(app.add_subcommand("evaluate", "Deletion and insertion curves of a heatmap")),
                 evaluate);
    SagOpts sag;
    add_sag(*with_config(app.add_subcommand("sag", "Beam-search MSEs and build a SAG")), sag);
    StatsOpts stats;
    add_stats(*with_config(app.add_subcommand("stats", "MSE statistics over a corpus")), stats);
    auto* xnn = app.add_subcommand("xnn", "Explanation networks");
    xnn->require_subcommand(1);
    XnnOpts xnn_opts;
    add_xnn(*with_config(xnn->add_subcommand("train", "Train an SRAE on the scorer's hidden layer")), xnn_opts);
    ServeOpts serve;
    add_serve(*with_config(app.add_subcommand("serve", "HTTP service for SAGs and what-if queries")), serve);
    RenderOpts render;
    add_render(*with_config(app.add_subcommand("render", "Masked image for a patch subset, or a heatmap PNG")),
               render);
    fs::path replay_manifest, replay_out;
    auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare outputs byte for byte");
    replay->add_option("manifest", replay_manifest)->required()->check(CLI::ExistingFile);
    replay->add_option("--out", replay_out, "Directory for the re-run outputs")->required();

    std::vector<const char*> cargv;
    for (const auto& a : args) cargv.push_back(a.c_str());
    try {
        app.parse(int(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }
    // The manifest keeps the caller's argv (config file included) for replay.
    const std::vector<std::string> recorded(raw.begin() + 1, raw.end());
    if (app.got_subcommand("train-toy")) return run_train(train, recorded);
    if (app.got_subcommand("explain")) return run_explain(explain, recorded);
    if (app.got_subcommand("evaluate")) return run_evaluate(evaluate, recorded);
    if (app.got_subcommand("sag")) return run_sag(sag, recorded);
    if (app.got_subcommand("stats")) return run_stats(stats, recorded);
    if (app.got_subcommand("xnn")) return run_xnn(xnn_opts, recorded);
    if (app.got_subcommand("serve")) return run_serve(serve, recorded);
    if (app.got_subcommand("render")) return run_render(render, recorded);
    if (app.got_subcommand("replay")) return run_replay(replay_manifest, replay_out);
    return kUsageError;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    try {
        return dispatch(args);
    } catch (const UsageError& e) {
        std::cerr << "sagkit: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "sagkit: " << e.what() << "\n";
        return 1;
    }
}
