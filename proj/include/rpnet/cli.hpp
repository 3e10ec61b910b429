#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rpnet/data.hpp"
#include "rpnet/gradcheck.hpp"
#include "rpnet/models.hpp"

namespace rpnet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration: everything a command needs, fully serializable. The
// resolved configuration is written next to each command's outputs so every
// result can be reproduced from it.
// ---------------------------------------------------------------------------

struct DatasetConfig {
    std::vector<std::string> classes{"sphere", "cube", "cylinder"};
    std::size_t points_per_cloud = 256;
    std::size_t clouds_per_class = 100;
    std::uint64_t seed = 0;
    std::vector<std::string> train_files, test_files;  // file datasets override toy generation
    std::string format = "bin";                        // "bin" | "xyz"
    bool text_labels = false;
};

struct ModelOverrides {
    std::size_t stem_channels = 0;  // 0 = preset default
    std::string input_features = "coords";
    std::string block_kind = "gra";
    std::string grouper = "knn";
    json gra;  // partial GraConfig fields
};

struct BenchConfig {
    std::size_t centroids = 512;
    std::size_t group = 32;
    std::vector<std::size_t> channels{64, 128};
    std::size_t repeats = 30;
};

struct RobustnessConfig {
    std::vector<double> noise_sigmas{0.0, 0.01, 0.05, 0.1};
    double noise_fraction = 0.1;
};

struct RunConfig {
    std::string command = "train";
    std::string preset = "W3";
    std::uint64_t seed = 0;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::string out_dir = "runs/out";
    std::size_t votes = 1;
    bool augment = true;
    std::string checkpoint;
    std::string gradcheck_scope = "primitives";
    std::string ablate_axis = "geometric";
    DatasetConfig dataset;
    ModelOverrides model;
    BenchConfig bench;
    RobustnessConfig robustness;
};

inline bool is_segmentation_preset(const std::string& preset) {
    return !preset.empty() && preset[0] == 'D';
}

// --------------------------- JSON round trip -------------------------------

inline json to_json(const RunConfig& c) {
    json j;
    j["command"] = c.command;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["out"] = c.out_dir;
    j["votes"] = c.votes;
    j["augment"] = c.augment;
    j["checkpoint"] = c.checkpoint;
    j["gradcheck_scope"] = c.gradcheck_scope;
    j["ablate_axis"] = c.ablate_axis;
    j["dataset"] = {{"classes", c.dataset.classes},
                    {"points_per_cloud", c.dataset.points_per_cloud},
                    {"clouds_per_class", c.dataset.clouds_per_class},
                    {"seed", c.dataset.seed},
                    {"train_files", c.dataset.train_files},
                    {"test_files", c.dataset.test_files},
                    {"format", c.dataset.format},
                    {"text_labels", c.dataset.text_labels}};
    j["model"] = {{"stem_channels", c.model.stem_channels},
                  {"input_features", c.model.input_features},
                  {"block_kind", c.model.block_kind},
                  {"grouper", c.model.grouper},
                  {"gra", c.model.gra.is_null() ? json::object() : c.model.gra}};
    j["bench"] = {{"centroids", c.bench.centroids},
                  {"group", c.bench.group},
                  {"channels", c.bench.channels},
                  {"repeats", c.bench.repeats}};
    j["robustness"] = {{"noise_sigmas", c.robustness.noise_sigmas},
                       {"noise_fraction", c.robustness.noise_fraction}};
    return j;
}

inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    try {
        c.command = j.value("command", c.command);
        c.preset = j.value("preset", c.preset);
        c.seed = j.value("seed", c.seed);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.out_dir = j.value("out", c.out_dir);
        c.votes = j.value("votes", c.votes);
        c.augment = j.value("augment", c.augment);
        c.checkpoint = j.value("checkpoint", c.checkpoint);
        c.gradcheck_scope = j.value("gradcheck_scope", c.gradcheck_scope);
        c.ablate_axis = j.value("ablate_axis", c.ablate_axis);
        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            c.dataset.classes = d.value("classes", c.dataset.classes);
            c.dataset.points_per_cloud = d.value("points_per_cloud", c.dataset.points_per_cloud);
            c.dataset.clouds_per_class = d.value("clouds_per_class", c.dataset.clouds_per_class);
            c.dataset.seed = d.value("seed", c.dataset.seed);
            c.dataset.train_files = d.value("train_files", c.dataset.train_files);
            c.dataset.test_files = d.value("test_files", c.dataset.test_files);
            c.dataset.format = d.value("format", c.dataset.format);
            c.dataset.text_labels = d.value("text_labels", c.dataset.text_labels);
        }
        if (j.contains("model")) {
            const json& m = j.at("model");
            c.model.stem_channels = m.value("stem_channels", c.model.stem_channels);
            c.model.input_features = m.value("input_features", c.model.input_features);
            c.model.block_kind = m.value("block_kind", c.model.block_kind);
            c.model.grouper = m.value("grouper", c.model.grouper);
            if (m.contains("gra")) c.model.gra = m.at("gra");
        }
        if (j.contains("bench")) {
            const json& b = j.at("bench");
            c.bench.centroids = b.value("centroids", c.bench.centroids);
            c.bench.group = b.value("group", c.bench.group);
            c.bench.channels = b.value("channels", c.bench.channels);
            c.bench.repeats = b.value("repeats", c.bench.repeats);
        }
        if (j.contains("robustness")) {
            const json& r = j.at("robustness");
            c.robustness.noise_sigmas = r.value("noise_sigmas", c.robustness.noise_sigmas);
            c.robustness.noise_fraction = r.value("noise_fraction", c.robustness.noise_fraction);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    return c;
}

// Apply a dotted-path override, e.g. "model.gra.attention_maps=1". Values
// parse as JSON scalars, falling back to strings.
inline void apply_override(json& j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
    const std::string path = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* cur = &j;
    std::size_t pos = 0;
    while (true) {
        const auto dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("bad override path: " + path);
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

// ------------------------- model construction ------------------------------

inline GraConfig gra_from_json(GraConfig base, const json& g) {
    if (g.is_null() || g.empty()) return base;
    base.r1 = g.value("r1", base.r1);
    base.r2 = g.value("r2", base.r2);
    base.attention_maps = g.value("attention_maps", base.attention_maps);
    base.m_hidden = g.value("m_hidden", base.m_hidden);
    base.normalize_attention = g.value("normalize_attention", base.normalize_attention);
    base.all_ones_attention = g.value("all_ones_attention", base.all_ones_attention);
    if (g.contains("geo")) {
        const json& geo = g.at("geo");
        base.geo.use_l2 = geo.value("l2", base.geo.use_l2);
        base.geo.use_l1 = geo.value("l1", base.geo.use_l1);
        base.geo.use_diff = geo.value("diff", base.geo.use_diff);
        base.geo.use_abs = geo.value("abs", base.geo.use_abs);
    }
    if (g.contains("semantic")) {
        const std::string s = g.at("semantic").get<std::string>();
        if (s == "sum") base.sem = SemanticKind::summation;
        else if (s == "sub") base.sem = SemanticKind::subtraction;
        else if (s == "cat") base.sem = SemanticKind::concatenation;
        else if (s == "had") base.sem = SemanticKind::hadamard;
        else if (s == "none") base.sem = SemanticKind::none;
        else throw ConfigError("unknown semantic kind '" + s + "'");
    }
    if (g.contains("aggregation")) {
        const std::string a = g.at("aggregation").get<std::string>();
        if (a == "max") base.agg = AggKind::max;
        else if (a == "mean") base.agg = AggKind::mean;
        else if (a == "sum") base.agg = AggKind::sum;
        else throw ConfigError("unknown aggregation kind '" + a + "'");
    }
    return base;
}

inline ModelSpec spec_from_config(const RunConfig& c, std::size_t num_classes) {
    ModelSpec spec =
        is_segmentation_preset(c.preset)
            ? rpnet_d_spec(c.preset, num_classes, c.dataset.points_per_cloud)
            : rpnet_w_spec(c.preset, num_classes, c.dataset.points_per_cloud);
    if (c.model.stem_channels) spec.stem_channels = c.model.stem_channels;
    if (c.model.input_features == "ones") spec.input_features = InputFeatures::ones;
    else if (c.model.input_features != "coords")
        throw ConfigError("input_features must be 'coords' or 'ones'");
    if (c.model.block_kind == "gra") spec.block_kind = BlockKind::gra;
    else if (c.model.block_kind == "sa_compare") spec.block_kind = BlockKind::sa_compare;
    else if (c.model.block_kind == "sa_degenerate") spec.block_kind = BlockKind::sa_degenerate;
    else throw ConfigError("unknown block kind '" + c.model.block_kind + "'");
    if (c.model.grouper == "knn") spec.grouper = GrouperKind::knn;
    else if (c.model.grouper == "ball") spec.grouper = GrouperKind::ball;
    else throw ConfigError("unknown grouper '" + c.model.grouper + "'");
    spec.gra = gra_from_json(spec.gra, c.model.gra);
    return spec;
}

// ------------------------------ datasets -----------------------------------

inline Dataset load_file_dataset(const std::vector<std::string>& files, const DatasetConfig& dc,
                                 DataTask task) {
    Dataset ds;
    const CloudFormat fmt = dc.format == "xyz" ? CloudFormat::xyz_text : CloudFormat::bin;
    int max_label = -1;
    for (const std::string& f : files) {
        PointCloud cloud = io_read(f, fmt, dc.text_labels);
        if (!cloud.has_labels())
            throw ConfigError("file dataset requires labels: " + f);
        if (cloud.n_points() != dc.points_per_cloud)
            throw ConfigError("file " + f + " has " + std::to_string(cloud.n_points()) +
                              " points, expected " + std::to_string(dc.points_per_cloud));
        if (task == DataTask::classify) {
            ds.cloud_labels.push_back(cloud.labels[0]);
            max_label = std::max(max_label, cloud.labels[0]);
            cloud.labels.clear();
        } else {
            for (int l : cloud.labels) max_label = std::max(max_label, l);
        }
        ds.clouds.push_back(std::move(cloud));
    }
    ds.num_classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

inline TrainTestSplit dataset_from_config(const RunConfig& c) {
    const DataTask task = is_segmentation_preset(c.preset) ? DataTask::segment : DataTask::classify;
    if (!c.dataset.train_files.empty() || !c.dataset.test_files.empty()) {
        TrainTestSplit split;
        split.train = load_file_dataset(c.dataset.train_files, c.dataset, task);
        split.test = load_file_dataset(c.dataset.test_files, c.dataset, task);
        const std::size_t k = std::max(split.train.num_classes, split.test.num_classes);
        split.train.num_classes = split.test.num_classes = k;
        return split;
    }
    ToyDatasetSpec spec;
    spec.task = task;
    spec.classes.clear();
    for (const std::string& s : c.dataset.classes) spec.classes.push_back(shape_kind_from_string(s));
    spec.points_per_cloud = c.dataset.points_per_cloud;
    spec.clouds_per_class = c.dataset.clouds_per_class;
    spec.rng_seed = c.dataset.seed;
    return generate_toy(spec);
}

// ------------------------------- metrics -----------------------------------

struct EvalMetrics {
    double accuracy = 0.0;
    double miou = 0.0;  // segmentation only
};

// Mean per-class IoU over classes present in the ground truth.
inline double mean_iou(const std::vector<std::uint64_t>& confusion, std::size_t k) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::uint64_t tp = confusion[c * k + c];
        std::uint64_t fp = 0, fn = 0, gt = 0;
        for (std::size_t o = 0; o < k; ++o) {
            gt += confusion[c * k + o];
            if (o != c) {
                fn += confusion[c * k + o];  // true c predicted o
                fp += confusion[o * k + c];  // true o predicted c
            }
        }
        if (gt == 0) continue;  // class absent from ground truth
        total += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

inline std::size_t eval_thread_count(std::size_t jobs) {
    std::size_t t = std::thread::hardware_concurrency();
    if (t == 0) t = 1;
    if (const char* env = std::getenv("RPNET_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) t = std::min<std::size_t>(t, static_cast<std::size_t>(v));
        else t = 1;
    }
    return std::max<std::size_t>(1, std::min(t, jobs));
}

inline int argmax_row(const Tensor& probs, std::size_t row) {
    int best = 0;
    for (std::size_t j = 1; j < probs.extent(1); ++j)
        if (probs.at(row, j) > probs.at(row, best)) best = static_cast<int>(j);
    return best;
}

// Evaluation fans out over a read-only model; per-cloud vote streams derive
// from (seed, cloud index) so the result is independent of scheduling.
inline EvalMetrics evaluate_model(const Model& model, const Dataset& ds, std::size_t votes,
                                  std::uint64_t seed) {
    const std::size_t n = ds.clouds.size();
    const std::size_t k = ds.num_classes;
    const bool segment = model.spec.task == Task::segment;
    const std::size_t threads = eval_thread_count(n);

    std::vector<std::uint64_t> confusion(k * k, 0);
    std::vector<std::uint64_t> correct_per_thread(threads, 0), total_per_thread(threads, 0);
    std::vector<std::vector<std::uint64_t>> conf_per_thread(threads,
                                                            std::vector<std::uint64_t>(k * k, 0));

    auto worker = [&](std::size_t tid) {
        for (std::size_t i = tid; i < n; i += threads) {
            Rng vote_rng = Rng(seed).split("vote").split(i);
            Tensor probs = vote_probabilities(model, ds.clouds[i], votes, vote_rng);
            if (segment) {
                for (std::size_t p = 0; p < probs.extent(0); ++p) {
                    const int pred = argmax_row(probs, p);
                    const int truth = ds.clouds[i].labels[p];
                    conf_per_thread[tid][static_cast<std::size_t>(truth) * k + pred] += 1;
                    correct_per_thread[tid] += pred == truth;
                    total_per_thread[tid] += 1;
                }
            } else {
                const int pred = argmax_row(probs, 0);
                const int truth = ds.cloud_labels[i];
                correct_per_thread[tid] += pred == truth;
                total_per_thread[tid] += 1;
            }
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }

    std::uint64_t correct = 0, total = 0;
    for (std::size_t t = 0; t < threads; ++t) {
        correct += correct_per_thread[t];
        total += total_per_thread[t];
        for (std::size_t i = 0; i < k * k; ++i) confusion[i] += conf_per_thread[t][i];
    }
    EvalMetrics m;
    m.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    if (segment) m.miou = mean_iou(confusion, k);
    return m;
}

// Nearest-centroid baseline for the toy classification task: each class is
// summarized by the 3D centroid of all its training points; a cloud is
// assigned to the class whose centroid is nearest to the cloud's own.
inline double nearest_centroid_baseline(const Dataset& train, const Dataset& test) {
    const std::size_t k = train.num_classes;
    std::vector<double> centroid(k * 3, 0.0);
    std::vector<std::uint64_t> count(k, 0);
    for (std::size_t i = 0; i < train.clouds.size(); ++i) {
        const std::size_t c = static_cast<std::size_t>(train.cloud_labels[i]);
        const Tensor& pts = train.clouds[i].coords;
        for (std::size_t p = 0; p < pts.extent(0); ++p)
            for (std::size_t d = 0; d < 3; ++d) centroid[c * 3 + d] += pts.at(p, d);
        count[c] += pts.extent(0);
    }
    for (std::size_t c = 0; c < k; ++c)
        if (count[c])
            for (std::size_t d = 0; d < 3; ++d) centroid[c * 3 + d] /= static_cast<double>(count[c]);

    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < test.clouds.size(); ++i) {
        const Tensor& pts = test.clouds[i].coords;
        double mean[3] = {0, 0, 0};
        for (std::size_t p = 0; p < pts.extent(0); ++p)
            for (std::size_t d = 0; d < 3; ++d) mean[d] += pts.at(p, d);
        for (double& v : mean) v /= static_cast<double>(pts.extent(0));
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < k; ++c) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < 3; ++d) {
                const double diff = mean[d] - centroid[c * 3 + d];
                d2 += diff * diff;
            }
            if (d2 < best_d) {
                best_d = d2;
                best = c;
            }
        }
        correct += static_cast<int>(best) == test.cloud_labels[i];
    }
    return test.clouds.empty() ? 0.0
                               : static_cast<double>(correct) / static_cast<double>(test.clouds.size());
}

// ------------------------------- training ----------------------------------

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct TrainResult {
    Model model;
    std::vector<std::string> metric_rows;
    double final_accuracy = 0.0;
    double final_miou = 0.0;
};

inline TrainResult train_model(const RunConfig& c, const TrainTestSplit& data,
                               std::ostream* log = nullptr) {
    const bool segment = is_segmentation_preset(c.preset);
    TrainResult result;
    result.model = Model(spec_from_config(c, data.train.num_classes), c.seed);
    Model& model = result.model;

    Adam adam;
    auto params = model.parameters();
    Rng root(c.seed);

    const std::size_t n_train = data.train.clouds.size();
    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
        adam.set_epoch(epoch);
        Rng order_rng = root.split("order").split(epoch);
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n_train; start += c.batch_size) {
            const std::size_t stop = std::min(start + c.batch_size, n_train);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            model.zero_grad();
            for (std::size_t bi = start; bi < stop; ++bi) {
                const std::size_t idx = order[bi];
                Rng aug_rng = root.split("aug").split(epoch).split(idx);
                Rng drop_rng = root.split("drop").split(epoch).split(idx);
                PointCloud cloud = c.augment ? rpnet::augment(data.train.clouds[idx], aug_rng)
                                             : data.train.clouds[idx];
                Model::ForwardCache cache;
                Tensor logits = model.forward(cloud, Mode::train, &drop_rng, &cache);
                CrossEntropy ce =
                    segment ? softmax_cross_entropy(logits, cloud.labels)
                            : softmax_cross_entropy(
                                  logits, std::vector<int>{data.train.cloud_labels[idx]});
                if (!std::isfinite(ce.loss))
                    throw StateError("non-finite loss at epoch " + std::to_string(epoch) +
                                     ", cloud " + std::to_string(idx));
                epoch_loss += ce.loss;
                ++seen;
                model.backward(cache, scale(ce.dlogits, inv_batch));
            }
            adam.step(params);
        }

        EvalMetrics m = evaluate_model(model, data.test, 1, c.seed);
        const double train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        std::string row = std::to_string(epoch) + "," + format_double(train_loss) + "," +
                          format_double(m.accuracy);
        if (segment) row += "," + format_double(m.miou);
        result.metric_rows.push_back(row);
        result.final_accuracy = m.accuracy;
        result.final_miou = m.miou;
        if (log)
            (*log) << "epoch " << epoch << " lr " << adam.learning_rate() << " loss " << train_loss
                   << " acc " << m.accuracy << (segment ? " miou " + std::to_string(m.miou) : "")
                   << "\n";
    }
    return result;
}

// ------------------------------ output files -------------------------------

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << content;
    if (!os) throw IoError("write failure: " + path);
}

inline void write_resolved_config(const RunConfig& c) {
    std::filesystem::create_directories(c.out_dir);
    write_text_file(c.out_dir + "/config.json", to_json(c).dump(2) + "\n");
}

inline const char* metrics_header(bool segment) {
    return segment ? "epoch,train_loss,test_accuracy,test_miou" : "epoch,train_loss,test_accuracy";
}

// -------------------------------- commands ---------------------------------

inline int cmd_train(const RunConfig& c) {
    write_resolved_config(c);
    TrainTestSplit data = dataset_from_config(c);
    const bool segment = is_segmentation_preset(c.preset);

    TrainResult result = train_model(c, data, &std::cout);

    std::string csv = std::string(metrics_header(segment)) + "\n";
    for (const std::string& row : result.metric_rows) csv += row + "\n";
    write_text_file(c.out_dir + "/metrics.csv", csv);

    auto params = result.model.parameters();
    std::vector<Parameter*> plist(params.begin(), params.end());
    save_checkpoint(c.out_dir + "/model.ckpt", plist);

    if (!segment) {
        const double baseline = nearest_centroid_baseline(data.train, data.test);
        std::cout << "nearest-centroid baseline accuracy: " << baseline << "\n";
        std::cout << "final test accuracy: " << result.final_accuracy << "\n";
    } else {
        std::cout << "final test accuracy: " << result.final_accuracy
                  << " miou: " << result.final_miou << "\n";
    }
    return 0;
}

inline Model load_model_from_config(const RunConfig& c, std::size_t num_classes) {
    Model model(spec_from_config(c, num_classes), c.seed);
    if (c.checkpoint.empty()) throw ConfigError("this command needs a checkpoint path");
    auto ckpt = load_checkpoint(c.checkpoint);
    auto params = model.parameters();
    restore_parameters(ckpt, params);
    return model;
}

inline int cmd_eval(const RunConfig& c) {
    write_resolved_config(c);
    TrainTestSplit data = dataset_from_config(c);
    const bool segment = is_segmentation_preset(c.preset);
    Model model = load_model_from_config(c, data.test.num_classes);
    EvalMetrics m = evaluate_model(model, data.test, c.votes, c.seed);
    std::string csv = segment ? "accuracy,miou\n" + format_double(m.accuracy) + "," +
                                    format_double(m.miou) + "\n"
                              : "accuracy\n" + format_double(m.accuracy) + "\n";
    write_text_file(c.out_dir + "/eval.csv", csv);
    std::cout << "accuracy: " << m.accuracy;
    if (segment) std::cout << " miou: " << m.miou;
    std::cout << "\n";
    return 0;
}

// Gradient certification over a chosen scope. Returns nonzero when any check
// fails; one line per check.
int cmd_gradcheck(const RunConfig& c);  // defined below, needs the GRA diffop

inline int cmd_bench(const RunConfig& c);
inline int cmd_ablate(const RunConfig& c);
inline int cmd_robustness(const RunConfig& c);

inline int run_command(const RunConfig& c) {
    if (c.command == "train") return cmd_train(c);
    if (c.command == "eval") return cmd_eval(c);
    if (c.command == "gradcheck") return cmd_gradcheck(c);
    if (c.command == "bench") return cmd_bench(c);
    if (c.command == "ablate") return cmd_ablate(c);
    if (c.command == "robustness") return cmd_robustness(c);
    throw ConfigError("unknown command '" + c.command + "'");
}

// Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error.
inline int run_command_with_exit_codes(const RunConfig& c) {
    try {
        return run_command(c);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CountError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const LabelError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const EmptyGroupError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace rpnet

#include "rpnet/cli_commands.hpp"
