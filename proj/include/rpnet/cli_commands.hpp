#pragma once

// Implementation of the gradcheck / bench / ablate / robustness commands.
// Included at the end of cli.hpp.

#include <chrono>
#include <functional>

#include "rpnet/diffops.hpp"

namespace rpnet {

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct ModelGradCheckReport {
    bool pass = true;
    double max_rel_error = 0.0;
    std::string worst;
};

// Finite-difference certification of a full model's parameter gradients on
// one cloud. Coordinates per parameter are subsampled; coordinates that land
// near a relu kink or pooling tie are retried at smaller steps, where a
// genuine gradient bug persists but a kink crossing vanishes.
inline ModelGradCheckReport model_gradient_check(Model& model, const PointCloud& cloud,
                                                 const std::vector<int>& labels,
                                                 std::size_t max_coords_per_param, Rng& rng,
                                                 double step = 1e-3, double tol = 1e-4) {
    ModelGradCheckReport report;
    auto params = model.parameters();

    auto loss_fn = [&]() {
        Tensor logits = model.forward(cloud, Mode::eval);
        return softmax_cross_entropy(logits, labels).loss;
    };

    Model::ForwardCache cache;
    Tensor logits = model.forward(cloud, Mode::eval, nullptr, &cache);
    CrossEntropy ce = softmax_cross_entropy(logits, labels);
    model.zero_grad();
    model.backward(cache, ce.dlogits);

    for (Parameter* p : params) {
        std::vector<std::size_t> coords;
        if (p->value.size() <= max_coords_per_param) {
            for (std::size_t i = 0; i < p->value.size(); ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < max_coords_per_param; ++i)
                coords.push_back(rng.uniform_index(p->value.size()));
        }
        for (std::size_t c : coords) {
            const double analytic = p->grad[c];
            double best_rel = 1e300;
            for (double h : {step, step / 8.0, step / 64.0}) {
                const double saved = p->value[c];
                p->value[c] = saved + h;
                const double up = loss_fn();
                p->value[c] = saved - h;
                const double down = loss_fn();
                p->value[c] = saved;
                const double numeric = (up - down) / (2.0 * h);
                const double rel =
                    std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
                best_rel = std::min(best_rel, rel);
                if (best_rel <= tol) break;
            }
            if (best_rel > report.max_rel_error) {
                report.max_rel_error = best_rel;
                report.worst = p->name + "[" + std::to_string(c) + "]";
            }
            if (best_rel > tol) report.pass = false;
        }
    }
    return report;
}

inline int cmd_gradcheck(const RunConfig& c) {
    write_resolved_config(c);
    bool all_pass = true;
    std::string csv = "scope,name,max_rel_error,pass\n";
    const std::size_t seeds = 5;

    auto run_ops = [&](const char* scope, const std::vector<DiffOp>& ops) {
        for (const DiffOp& op : ops) {
            double worst = 0.0;
            bool pass = true;
            for (std::size_t s = 0; s < seeds; ++s) {
                Rng rng(c.seed + s);
                GradCheckReport r = gradient_check(op, rng);
                worst = std::max(worst, r.max_rel_error);
                if (!r.pass) {
                    pass = false;
                    std::cout << "FAIL " << scope << "/" << op.name << " seed " << s << ": "
                              << r.detail << "\n";
                }
            }
            std::cout << (pass ? "PASS " : "FAIL ") << scope << "/" << op.name
                      << " max_rel_error=" << worst << "\n";
            csv += std::string(scope) + "," + op.name + "," + format_double(worst) + "," +
                   (pass ? "1" : "0") + "\n";
            all_pass = all_pass && pass;
        }
    };

    if (c.gradcheck_scope == "primitives" || c.gradcheck_scope == "all") {
        run_ops("primitives", primitive_diffops());
        run_ops("primitives", composite_diffops());
    }
    if (c.gradcheck_scope == "gra" || c.gradcheck_scope == "all") {
        GraConfig cfg;  // library defaults
        cfg.group_size = 4;
        run_ops("gra", {make_gra_diffop(cfg, 2, 4)});
    }
    if (c.gradcheck_scope == "model" || c.gradcheck_scope == "all") {
        ModelSpec spec = rpnet_w_spec("W1", 3, 64);
        spec.stem_channels = 16;
        spec.stages[0].out_channels = 32;
        spec.head.hidden = {32, 16};
        Model model(spec, c.seed);
        Rng data_rng(c.seed + 100);
        PointCloud cloud;
        cloud.coords = random_tensor(data_rng, {64, 3});
        Rng coord_rng(c.seed + 7);
        ModelGradCheckReport r =
            model_gradient_check(model, cloud, std::vector<int>{1}, 40, coord_rng);
        std::cout << (r.pass ? "PASS " : "FAIL ") << "model/W1 max_rel_error=" << r.max_rel_error
                  << (r.worst.empty() ? "" : " worst=" + r.worst) << "\n";
        csv += std::string("model,W1,") + format_double(r.max_rel_error) + "," +
               (r.pass ? "1" : "0") + "\n";
        all_pass = all_pass && r.pass;
    }
    if (c.gradcheck_scope != "primitives" && c.gradcheck_scope != "gra" &&
        c.gradcheck_scope != "model" && c.gradcheck_scope != "all")
        throw ConfigError("gradcheck scope must be primitives|gra|model|all");

    write_text_file(c.out_dir + "/gradcheck.csv", csv);
    std::cout << (all_pass ? "gradient certification passed\n" : "gradient certification FAILED\n");
    return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchRow {
    std::string name;
    std::size_t channels, group, centroids;
    std::uint64_t params, macs;
    double wall_ms_median, wall_ms_iqr;
};

inline std::pair<double, double> median_iqr(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    return {quantile(0.5), quantile(0.75) - quantile(0.25)};
}

inline int cmd_bench(const RunConfig& c) {
    write_resolved_config(c);
    const std::size_t m = c.bench.centroids, g = c.bench.group;
    Rng data_rng(c.seed);
    std::vector<BenchRow> rows;
    bool counters_consistent = true;

    auto time_forward = [&](const std::function<void()>& fn) {
        for (int w = 0; w < 3; ++w) fn();
        std::vector<double> times;
        for (std::size_t r = 0; r < std::max<std::size_t>(30, c.bench.repeats); ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        return median_iqr(times);
    };

    for (std::size_t channels : c.bench.channels) {
        Tensor f_i = random_tensor(data_rng, {m, channels});
        Tensor f_ij = random_tensor(data_rng, {m, g, channels});
        Tensor p_i = random_tensor(data_rng, {m, 3});
        Tensor p_ij = random_tensor(data_rng, {m, g, 3});

        auto bench_block = [&](const std::string& name, auto& block, auto forward,
                               std::uint64_t analytic_params, std::uint64_t analytic_macs) {
            std::vector<Parameter*> params;
            block.collect(params);
            std::uint64_t measured_macs;
            {
                MacCounterScope scope;
                forward();
                measured_macs = scope.value();
            }
            if (measured_macs != analytic_macs) {
                std::cout << "FAIL " << name << ": analytic MACs " << analytic_macs
                          << " != instrumented " << measured_macs << "\n";
                counters_consistent = false;
            }
            auto [med, iqr] = time_forward(forward);
            rows.push_back({name, channels, g, m, count_params(params), analytic_macs, med, iqr});
            (void)analytic_params;
        };

        GraConfig gra_cfg;
        gra_cfg.channels = channels;
        gra_cfg.out_channels = channels;
        gra_cfg.group_size = g;
        {
            Rng init(c.seed + 1);
            GraBlock block("bench.gra", gra_cfg, init);
            bench_block(
                "gra_default", block, [&] { block.forward(f_i, f_ij, p_i, p_ij); },
                gra_param_count(gra_cfg), gra_forward_macs(gra_cfg, m, g));
        }
        {
            GraConfig wide = gra_cfg;
            wide.r2 = 1;
            Rng init(c.seed + 2);
            GraBlock block("bench.gra_r2_1", wide, init);
            bench_block(
                "gra_r2_1", block, [&] { block.forward(f_i, f_ij, p_i, p_ij); },
                gra_param_count(wide), gra_forward_macs(wide, m, g));
        }
        {
            SaConfig sa;
            sa.channels = channels;
            sa.out_channels = channels;
            Rng init(c.seed + 3);
            SaBlock block("bench.sa", sa, init);
            bench_block(
                "sa_baseline", block, [&] { block.forward(f_ij); }, sa_param_count(sa),
                sa_forward_macs(sa, m, g));
        }
        {
            RsConvConfig rs;
            rs.channels = channels;
            rs.out_channels = channels;
            Rng init(c.seed + 4);
            RsConvBlock block("bench.rsconv", rs, init);
            bench_block(
                "rsconv", block, [&] { block.forward(f_ij, p_i, p_ij); }, rsconv_param_count(rs),
                rsconv_forward_macs(rs, m, g));
        }
    }

    std::string csv = "config,channels,group,centroids,params,macs,wall_ms_median,wall_ms_iqr\n";
    for (const BenchRow& r : rows) {
        csv += r.name + "," + std::to_string(r.channels) + "," + std::to_string(r.group) + "," +
               std::to_string(r.centroids) + "," + std::to_string(r.params) + "," +
               std::to_string(r.macs) + "," + format_double(r.wall_ms_median) + "," +
               format_double(r.wall_ms_iqr) + "\n";
    }
    write_text_file(c.out_dir + "/bench.csv", csv);
    std::cout << csv;

    // whole-network totals at the published classification scale
    ModelSpec gra_spec = rpnet_w_spec("W7", 40, 1024);
    ModelSpec sa_spec = gra_spec;
    sa_spec.block_kind = BlockKind::sa_compare;
    Model gra_net(gra_spec, c.seed), sa_net(sa_spec, c.seed);
    const std::uint64_t gp = gra_net.analytic_param_count();
    const std::uint64_t sp = sa_net.analytic_param_count();
    const std::uint64_t gm = gra_net.analytic_forward_macs();
    const std::uint64_t sm = sa_net.analytic_forward_macs();
    std::ostringstream net;
    net << "network,params,macs\n"
        << "rpnet_w7_gra," << gp << "," << gm << "\n"
        << "rpnet_w7_sa_blocks," << sp << "," << sm << "\n";
    write_text_file(c.out_dir + "/bench_network.csv", net.str());
    const double p_saving = 100.0 * (1.0 - static_cast<double>(gp) / static_cast<double>(sp));
    const double m_saving = 100.0 * (1.0 - static_cast<double>(gm) / static_cast<double>(sm));
    std::printf("network totals (W7 blocks vs set-abstraction blocks, 1024 points):\n");
    std::printf("  parameters: %llu vs %llu -> %.1f%% saving (reference claim: around 30%%)\n",
                static_cast<unsigned long long>(gp), static_cast<unsigned long long>(sp), p_saving);
    std::printf("  multiply-accumulates: %llu vs %llu -> %.1f%% saving (reference claim: around 50%%)\n",
                static_cast<unsigned long long>(gm), static_cast<unsigned long long>(sm), m_saving);

    return counters_consistent ? 0 : 1;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateEntry {
    std::string label;
    json gra;
};

inline std::vector<AblateEntry> ablate_axis_entries(const std::string& axis) {
    auto geo = [](bool l2, bool l1, bool diff, bool abs) {
        return json{{"l2", l2}, {"l1", l1}, {"diff", diff}, {"abs", abs}};
    };
    if (axis == "geometric")
        return {{"A", json{{"geo", geo(true, false, false, false)}, {"semantic", "none"}}},
                {"B", json{{"geo", geo(true, true, false, false)}, {"semantic", "none"}}},
                {"C", json{{"geo", geo(true, true, true, true)}, {"semantic", "none"}}}};
    if (axis == "semantic")
        return {{"D", json{{"semantic", "sum"}}},
                {"E", json{{"semantic", "sub"}}},
                {"F", json{{"semantic", "cat"}}},
                {"G", json{{"semantic", "had"}}}};
    if (axis == "aggregation")
        return {{"max", json{{"aggregation", "max"}}},
                {"mean", json{{"aggregation", "mean"}}},
                {"sum", json{{"aggregation", "sum"}}}};
    if (axis == "cross_channel")
        return {{"K1", json{{"attention_maps", 1}}}, {"K4", json{{"attention_maps", 4}}}};
    throw ConfigError("ablate axis must be geometric|semantic|aggregation|cross_channel");
}

inline int cmd_ablate(const RunConfig& c) {
    if (!is_segmentation_preset(c.preset))
        throw ConfigError("ablation runs on a segmentation preset (D4 and kin)");
    write_resolved_config(c);
    TrainTestSplit data = dataset_from_config(c);

    std::string csv = "# toy-scale results; not comparable to published magnitudes\n";
    csv += "axis,label,geo_l2,geo_l1,geo_diff,geo_abs,semantic,aggregation,attention_maps,"
           "accuracy,miou\n";

    for (const AblateEntry& entry : ablate_axis_entries(c.ablate_axis)) {
        RunConfig rc = c;
        json gra = rc.model.gra.is_null() ? json::object() : rc.model.gra;
        for (auto it = entry.gra.begin(); it != entry.gra.end(); ++it) gra[it.key()] = it.value();
        rc.model.gra = gra;

        TrainResult result = train_model(rc, data);
        const GraConfig cfg = spec_from_config(rc, data.train.num_classes).gra;
        csv += c.ablate_axis + "," + entry.label + "," + (cfg.geo.use_l2 ? "1" : "0") + "," +
               (cfg.geo.use_l1 ? "1" : "0") + "," + (cfg.geo.use_diff ? "1" : "0") + "," +
               (cfg.geo.use_abs ? "1" : "0") + "," + to_string(cfg.sem) + "," +
               to_string(cfg.agg) + "," + std::to_string(cfg.attention_maps) + "," +
               format_double(result.final_accuracy) + "," + format_double(result.final_miou) + "\n";
        std::cout << c.ablate_axis << "/" << entry.label << ": acc " << result.final_accuracy
                  << " miou " << result.final_miou << "\n";
    }
    write_text_file(c.out_dir + "/ablate_" + c.ablate_axis + ".csv", csv);
    return 0;
}

// ---------------------------------------------------------------------------
// robustness
// ---------------------------------------------------------------------------

// Evaluate with a per-cloud transformation; the transform also chooses the
// sampling seed so order permutations can remap it.
inline EvalMetrics evaluate_transformed(
    const Model& model, const Dataset& ds, std::size_t votes, std::uint64_t seed,
    const std::function<std::pair<PointCloud, std::size_t>(const PointCloud&, std::size_t)>& tf) {
    const std::size_t n = ds.clouds.size();
    const std::size_t k = ds.num_classes;
    const bool segment = model.spec.task == Task::segment;
    const std::size_t threads = eval_thread_count(n);

    std::vector<std::uint64_t> correct(threads, 0), total(threads, 0);
    std::vector<std::vector<std::uint64_t>> conf(threads, std::vector<std::uint64_t>(k * k, 0));
    auto worker = [&](std::size_t tid) {
        for (std::size_t i = tid; i < n; i += threads) {
            auto [cloud, fps_seed] = tf(ds.clouds[i], i);
            Rng vote_rng = Rng(seed).split("vote").split(i);
            Tensor probs = vote_probabilities(model, cloud, votes, vote_rng, fps_seed);
            if (segment) {
                for (std::size_t p = 0; p < probs.extent(0); ++p) {
                    const int pred = argmax_row(probs, p);
                    const int truth = cloud.labels[p];
                    conf[tid][static_cast<std::size_t>(truth) * k + pred] += 1;
                    correct[tid] += pred == truth;
                    total[tid] += 1;
                }
            } else {
                correct[tid] += argmax_row(probs, 0) == ds.cloud_labels[i];
                total[tid] += 1;
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
    std::uint64_t c_sum = 0, t_sum = 0;
    std::vector<std::uint64_t> conf_sum(k * k, 0);
    for (std::size_t t = 0; t < threads; ++t) {
        c_sum += correct[t];
        t_sum += total[t];
        for (std::size_t i = 0; i < k * k; ++i) conf_sum[i] += conf[t][i];
    }
    EvalMetrics m;
    m.accuracy = t_sum ? static_cast<double>(c_sum) / static_cast<double>(t_sum) : 0.0;
    if (segment) m.miou = mean_iou(conf_sum, k);
    return m;
}

inline int cmd_robustness(const RunConfig& c) {
    write_resolved_config(c);
    TrainTestSplit data = dataset_from_config(c);
    Model model = load_model_from_config(c, data.test.num_classes);

    using TF = std::function<std::pair<PointCloud, std::size_t>(const PointCloud&, std::size_t)>;
    auto identity = [](const PointCloud& cl, std::size_t) { return std::make_pair(cl, std::size_t{0}); };
    auto translated = [](double off) {
        return TF([off](const PointCloud& cl, std::size_t) {
            PerturbationSpec p;
            p.kind = PerturbKind::translate;
            p.magnitude = off;
            return std::make_pair(apply_rigid(cl, p), std::size_t{0});
        });
    };
    auto rotated = [](double deg) {
        return TF([deg](const PointCloud& cl, std::size_t) {
            PerturbationSpec p;
            p.kind = PerturbKind::rotate_y;
            p.magnitude = deg;
            return std::make_pair(apply_rigid(cl, p), std::size_t{0});
        });
    };
    const std::uint64_t seed = c.seed;
    TF permuted = [seed](const PointCloud& cl, std::size_t i) {
        const std::size_t n = cl.n_points();
        std::vector<std::size_t> perm(n);
        for (std::size_t j = 0; j < n; ++j) perm[j] = j;
        Rng rng = Rng(seed).split("perm").split(i);
        rng.shuffle(perm);
        std::size_t fps_seed = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (perm[j] == 0) {
                fps_seed = j;
                break;
            }
        return std::make_pair(permute_points(cl, perm), fps_seed);
    };
    auto noisy = [seed, &c](double sigma) {
        const double fraction = c.robustness.noise_fraction;
        return TF([sigma, fraction, seed](const PointCloud& cl, std::size_t i) {
            Rng rng = Rng(seed).split("noise").split(i);
            return std::make_pair(add_noise(cl, sigma, fraction, rng), std::size_t{0});
        });
    };

    std::vector<std::pair<std::string, TF>> columns;
    columns.emplace_back("origin", identity);
    columns.emplace_back("perm", permuted);
    columns.emplace_back("translate_plus", translated(0.2));
    columns.emplace_back("translate_minus", translated(-0.2));
    columns.emplace_back("rot90", rotated(90.0));
    columns.emplace_back("rot180", rotated(180.0));
    columns.emplace_back("rot270", rotated(270.0));
    for (double s : c.robustness.noise_sigmas) {
        std::ostringstream name;
        name << "noise_" << s;
        columns.emplace_back(name.str(), noisy(s));
    }

    std::string header, values;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        EvalMetrics m = evaluate_transformed(model, data.test, c.votes, c.seed, columns[i].second);
        header += columns[i].first + (i + 1 < columns.size() ? "," : "\n");
        values += format_double(m.accuracy) + (i + 1 < columns.size() ? "," : "\n");
        std::cout << columns[i].first << ": " << m.accuracy << "\n";
    }
    write_text_file(c.out_dir + "/robustness.csv", header + values);
    return 0;
}

}  // namespace rpnet
