#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "resmoe/compressed.hpp"
#include "resmoe/container.hpp"
#include "resmoe/geometry.hpp"
#include "resmoe/metrics.hpp"
#include "resmoe/rng.hpp"
#include "resmoe/synth.hpp"

namespace {

using namespace resmoe;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --spec accepts either a JSON file path or the JSON itself.
std::string spec_text(const std::string& arg) {
  const auto first = arg.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && arg[first] == '{') return arg;
  return read_text_file(arg);
}

struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

LayerRange parse_layer_range(const std::string& text, std::size_t n_layers) {
  const auto dots = text.find("..");
  if (dots == std::string::npos)
    throw ValidationError("--layers expects a half-open range a..b, got '" +
                          text + "'");
  LayerRange r;
  try {
    r.begin = std::stoul(text.substr(0, dots));
    r.end = std::stoul(text.substr(dots + 2));
  } catch (const std::exception&) {
    throw ValidationError("--layers bounds must be integers, got '" + text +
                          "'");
  }
  if (r.begin > r.end || r.end > n_layers)
    throw ValidationError("--layers " + text + " out of range for " +
                          std::to_string(n_layers) + " layer(s)");
  return r;
}

void parse_sparse_flag(const std::string& text, CompressionConfig& cfg) {
  const std::string names[] = {"coo16", "coo32", "coo64",
                               "csr16", "csr32", "csr64"};
  const SparseFormat fmts[] = {SparseFormat::COO, SparseFormat::COO,
                               SparseFormat::COO, SparseFormat::CSR,
                               SparseFormat::CSR, SparseFormat::CSR};
  const IndexWidth widths[] = {IndexWidth::I16, IndexWidth::I32,
                               IndexWidth::I64, IndexWidth::I16,
                               IndexWidth::I32, IndexWidth::I64};
  for (int i = 0; i < 6; ++i)
    if (text == names[i]) {
      cfg.sparse_format = fmts[i];
      cfg.index_width = widths[i];
      return;
    }
  throw ValidationError("--sparse must be one of coo16 coo32 coo64 csr16 "
                        "csr32 csr64, got '" +
                        text + "'");
}

void check_same_shape(const MoEModel& model, const CompressedModel& comp) {
  if (model.layers.size() != comp.layers.size())
    throw ShapeError("model has " + std::to_string(model.layers.size()) +
                     " layer(s) but the artifact has " +
                     std::to_string(comp.layers.size()));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const MoELayer& a = model.layers[l];
    const CompressedLayer& b = comp.layers[l];
    if (a.n_experts() != b.n_experts || a.p() != b.p ||
        a.p_inner() != b.p_inner || a.top_k != b.top_k ||
        a.experts[0].kind != b.kind)
      throw ShapeError("layer " + std::to_string(l) +
                       ": model and artifact shapes disagree");
  }
}

std::vector<Vector> random_inputs(std::size_t n, std::size_t p,
                                  std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Vector> xs(n, Vector(p));
  for (auto& x : xs)
    for (double& v : x) v = rng.next_normal();
  return xs;
}

double mean_output_l2(const MoELayer& orig, const CompressedLayer& comp,
                      const std::vector<Vector>& xs) {
  double acc = 0.0;
  for (const auto& x : xs) {
    const Vector y0 = layer_forward(orig, x);
    const Vector y1 = compressed_forward(comp, x);
    double sq = 0.0;
    for (std::size_t j = 0; j < y0.size(); ++j) {
      const double d = y0[j] - y1[j];
      sq += d * d;
    }
    acc += std::sqrt(sq);
  }
  return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
}

ReportRow make_row(std::size_t layer_id, const MoELayer& orig,
                   const CompressedLayer& comp, const std::vector<Vector>& xs) {
  const auto err = approx_error(orig, comp, layer_id).per_layer[0];
  const auto mem = memory_report(comp, MemoryModel{});
  ReportRow row;
  row.layer_id = layer_id;
  row.method = to_string(comp.method);
  row.keep_ratio = comp.keep_ratio;
  row.epsilon_raw = err.epsilon_raw;
  row.epsilon_norm = err.epsilon_normalized;
  row.bytes = mem.bytes;
  row.mb = mem.mb;
  row.flops = flops_report(comp, FlopsModel{});
  row.output_l2_error = mean_output_l2(orig, comp, xs);
  return row;
}

ReportFormat format_for(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv")
    return ReportFormat::CSV;
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
    return ReportFormat::JSON;
  throw ValidationError("--report path must end in .csv or .json, got '" +
                        path + "'");
}

struct GenOpts {
  std::string spec;
  std::string out;
};

void run_gen(const GenOpts& o) {
  const SynthSpec spec = SynthSpec::from_json(spec_text(o.spec));
  const MoEModel model = generate_model(spec);
  save_model(model, o.out);
  std::printf("wrote %s: %zu layer(s), family=%s N=%zu p=%zu p_inner=%zu "
              "top_k=%zu seed=%llu\n",
              o.out.c_str(), model.layers.size(),
              to_string(spec.family).c_str(), spec.n_experts, spec.p,
              spec.p_inner, spec.top_k,
              static_cast<unsigned long long>(spec.seed));
}

struct CompressOpts {
  std::string model;
  std::string out;
  std::string method;
  double keep_ratio = 0.25;
  std::string layers;
  std::string center;
  std::string sparse;
  std::size_t bary_iters = 100;
  double bary_tol = 1e-8;
  std::size_t svd_rank = 0;
  double expert_keep = 0.25;
};

Method resolve_method(const CompressOpts& o) {
  Method m = method_from_string(o.method);
  if (o.center.empty()) return m;
  if (m != Method::ResMoE_UP && m != Method::ResMoE_SVD)
    throw ValidationError("--center only applies to resmoe-up and "
                          "resmoe-svd; '" +
                          o.method + "' fixes its own center handling");
  if (o.center == "wb") return m;
  if (o.center == "avg") {
    if (m == Method::ResMoE_SVD)
      throw ValidationError(
          "--center avg is not available with resmoe-svd; use wb or none");
    return Method::AvgCenter_UP;
  }
  if (o.center == "none")
    return m == Method::ResMoE_UP ? Method::UP_sep : Method::SVD_plain;
  throw ValidationError("--center must be wb, avg, or none, got '" +
                        o.center + "'");
}

void run_compress(const CompressOpts& o) {
  const MoEModel model = load_model(o.model);
  const Method method = resolve_method(o);

  CompressionConfig cfg;
  if (!o.sparse.empty()) parse_sparse_flag(o.sparse, cfg);
  cfg.bary.max_iters = o.bary_iters;
  cfg.bary.rel_tol = o.bary_tol;
  cfg.bary.validate();
  if (o.svd_rank > 0) cfg.svd_rank = o.svd_rank;
  cfg.expert_keep = o.expert_keep;

  LayerRange range{0, model.layers.size()};
  if (!o.layers.empty()) range = parse_layer_range(o.layers, model.layers.size());

  CompressedModel out;
  out.origin_spec_json = model.origin_spec_json;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const bool selected = l >= range.begin && l < range.end;
    const Method ml = selected ? method : Method::Dense;
    CompressedLayer c = compress_layer(model.layers[l], ml, o.keep_ratio, cfg);
    if (!selected) {
      std::printf("layer %zu: dense passthrough\n", l);
    } else {
      std::printf("layer %zu: method=%s keep_ratio=%.17g wb_loss=%.17g "
                  "iterations=%zu converged=%s",
                  l, to_string(c.method).c_str(), c.keep_ratio, c.wb_loss,
                  c.bary_iterations, c.bary_converged ? "yes" : "no");
      if (c.svd_rank > 0) std::printf(" svd_rank=%zu", c.svd_rank);
      std::printf("\n  residual norms:");
      for (const double v : c.residual_norms) std::printf(" %.17g", v);
      std::printf("\n");
    }
    out.layers.push_back(std::move(c));
  }
  save_compressed(out, o.out);
  std::printf("wrote %s\n", o.out.c_str());
}

struct EvalOpts {
  std::string model;
  std::string compressed;
  std::string report;
  std::size_t inputs = 50;
  std::uint64_t seed = 0;
  std::string sweep;
  std::string method;
};

void run_eval(const EvalOpts& o) {
  const MoEModel model = load_model(o.model);
  const ReportFormat fmt = format_for(o.report);
  const std::vector<Vector> xs =
      random_inputs(o.inputs, model.layers[0].p(), o.seed);

  std::vector<ReportRow> rows;
  if (!o.sweep.empty()) {
    if (o.method.empty())
      throw ValidationError("--sweep requires --method");
    const Method method = method_from_string(o.method);
    std::vector<double> grid;
    std::stringstream ss(o.sweep);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) grid.push_back(std::stod(item));
    if (grid.empty()) throw ValidationError("--sweep lists no ratios");
    for (const double s : grid)
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const CompressedLayer c =
            compress_layer(model.layers[l], method, s, CompressionConfig{});
        rows.push_back(make_row(l, model.layers[l], c, xs));
      }
  } else {
    const CompressedModel comp = load_compressed(o.compressed);
    check_same_shape(model, comp);
    for (std::size_t l = 0; l < model.layers.size(); ++l)
      rows.push_back(make_row(l, model.layers[l], comp.layers[l], xs));
  }
  emit_report(rows, fmt, o.report);
  std::printf("wrote %s (%zu row%s, %zu input%s, seed %llu)\n",
              o.report.c_str(), rows.size(), rows.size() == 1 ? "" : "s",
              o.inputs, o.inputs == 1 ? "" : "s",
              static_cast<unsigned long long>(o.seed));
}

struct ForwardOpts {
  std::string compressed;
  std::string input;
  std::size_t random = 0;
  std::uint64_t seed = 0;
  std::string compare;
};

void print_vector(const char* label, const Vector& v) {
  std::printf("%s [", label);
  for (std::size_t j = 0; j < v.size(); ++j)
    std::printf(j ? ", %.17g" : "%.17g", v[j]);
  std::printf("]\n");
}

void run_forward(const ForwardOpts& o) {
  const CompressedModel comp = load_compressed(o.compressed);
  const std::size_t p = comp.layers[0].p;

  std::vector<Vector> xs;
  if (!o.input.empty()) {
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(o.input);
    } catch (const nlohmann::json::parse_error& e) {
      throw JsonError(std::string("--input is not valid JSON: ") + e.what());
    }
    if (!parsed.is_array())
      throw ValidationError("--input must be a JSON array of numbers");
    Vector x;
    for (const auto& v : parsed) {
      if (!v.is_number())
        throw ValidationError("--input must be a JSON array of numbers");
      x.push_back(v.get<double>());
    }
    if (x.size() != p)
      throw ShapeError("input has " + std::to_string(x.size()) +
                       " entries but the artifact expects p=" +
                       std::to_string(p));
    xs.push_back(std::move(x));
  } else {
    if (o.random == 0)
      throw ValidationError("pass --input <json array> or --random n");
    xs = random_inputs(o.random, p, o.seed);
  }

  MoEModel original;
  if (!o.compare.empty()) {
    original = load_model(o.compare);
    check_same_shape(original, comp);
  }

  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::printf("input %zu:\n", i);
    Vector x = xs[i];
    for (std::size_t l = 0; l < comp.layers.size(); ++l) {
      const CompressedLayer& layer = comp.layers[l];
      const Vector scores = compressed_gate_scores(layer, x);
      std::printf("  layer %zu gate scores:", l);
      for (const double v : scores) std::printf(" %.17g", v);
      std::printf("\n  layer %zu activated experts:", l);
      for (std::size_t k = 0; k < scores.size(); ++k)
        if (scores[k] > 0.0) std::printf(" %zu", k);
      std::printf("\n");
      x = compressed_forward(layer, x);
    }
    print_vector("  output:", x);
    if (!o.compare.empty()) {
      Vector y = xs[i];
      for (const auto& layer : original.layers) y = layer_forward(layer, y);
      double sq = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) {
        const double d = y[j] - x[j];
        sq += d * d;
      }
      std::printf("  l2_diff: %.17g\n", std::sqrt(sq));
    }
  }
}

struct TablesOpts {
  std::string geometry;
  double keep_ratio = 0.25;
};

void run_tables(const TablesOpts& o) {
  const ModelGeometry g = geometry_by_name(o.geometry);
  std::fputs(render_memory_table(g, o.keep_ratio).c_str(), stdout);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoE layer compression: barycenter experts plus compressed "
               "residuals, with pruning and SVD baselines"};
  app.require_subcommand(1);

  GenOpts gen;
  auto* gen_cmd = app.add_subcommand(
      "gen", "Generate a synthetic MoE model file from a JSON spec");
  gen_cmd->add_option("--spec", gen.spec,
                      "SynthSpec JSON (inline or a file path)")
      ->required();
  gen_cmd->add_option("--out", gen.out, "Output .rmt path")->required();
  gen_cmd->callback([&gen] { run_gen(gen); });

  CompressOpts co;
  auto* c_cmd = app.add_subcommand("compress",
                                   "Compress a model file into an artifact");
  c_cmd->add_option("--model", co.model, "Input .rmt path")->required();
  c_cmd->add_option("--method", co.method,
                    "resmoe-up | resmoe-svd | up-concat | up-sep | sp | svd "
                    "| avg-up | group-merge | dense")
      ->required();
  c_cmd->add_option("--keep-ratio", co.keep_ratio,
                    "Fraction of parameters kept, in (0, 1]")
      ->required();
  c_cmd->add_option("--layers", co.layers,
                    "Half-open layer range a..b to compress; the rest pass "
                    "through dense");
  c_cmd->add_option("--center", co.center,
                    "Center estimator for resmoe-up/resmoe-svd: wb "
                    "(aligned barycenter), avg (unaligned mean), none");
  c_cmd->add_option("--sparse", co.sparse,
                    "Residual encoding: coo16 coo32 coo64 csr16 csr32 csr64 "
                    "(default csr32)");
  c_cmd->add_option("--bary-iters", co.bary_iters,
                    "Barycenter iteration cap (default 100)");
  c_cmd->add_option("--bary-tol", co.bary_tol,
                    "Barycenter relative tolerance (default 1e-8)");
  c_cmd->add_option("--svd-rank", co.svd_rank,
                    "Override the rank budget for the SVD methods");
  c_cmd->add_option("--expert-keep", co.expert_keep,
                    "group-merge: fraction of experts kept as group centers "
                    "(default 0.25)");
  c_cmd->add_option("--out", co.out, "Output .rmz path")->required();
  c_cmd->callback([&co] { run_compress(co); });

  EvalOpts eo;
  auto* e_cmd = app.add_subcommand(
      "eval", "Report approximation error, memory, and FLOPs");
  e_cmd->add_option("--model", eo.model, "Original .rmt path")->required();
  auto* e_comp =
      e_cmd->add_option("--compressed", eo.compressed, "Artifact .rmz path");
  e_cmd->add_option("--inputs", eo.inputs,
                    "Random inputs per layer for output error (default 50)");
  e_cmd->add_option("--seed", eo.seed, "Input RNG seed (default 0)");
  auto* e_sweep = e_cmd->add_option(
      "--sweep", eo.sweep,
      "Comma-separated keep ratios to compress and score in one run");
  e_cmd->add_option("--method", eo.method, "Method for --sweep");
  e_cmd->add_option("--report", eo.report, "Output path (.csv or .json)")
      ->required();
  e_sweep->excludes(e_comp);
  e_comp->excludes(e_sweep);
  e_cmd->callback([&eo, e_comp, e_sweep] {
    if (e_comp->count() == 0 && e_sweep->count() == 0)
      throw resmoe::ValidationError("eval needs --compressed or --sweep");
    run_eval(eo);
  });

  ForwardOpts fo;
  auto* f_cmd = app.add_subcommand(
      "forward", "Run inputs through a compressed artifact");
  f_cmd->add_option("--compressed", fo.compressed, "Artifact .rmz path")
      ->required();
  auto* f_in = f_cmd->add_option("--input", fo.input,
                                 "One input vector as a JSON array");
  auto* f_rand = f_cmd->add_option("--random", fo.random,
                                   "Number of random inputs to draw");
  f_cmd->add_option("--seed", fo.seed, "Input RNG seed (default 0)");
  f_cmd->add_option("--compare", fo.compare,
                    "Original .rmt to diff against");
  f_in->excludes(f_rand);
  f_rand->excludes(f_in);
  f_cmd->callback([&fo] { run_forward(fo); });

  TablesOpts to;
  auto* t_cmd = app.add_subcommand(
      "tables", "Print per-method memory rows for a known geometry");
  t_cmd->add_option("--geometry", to.geometry, "switch | mixtral | deepseek")
      ->required();
  t_cmd->add_option("--keep-ratio", to.keep_ratio,
                    "Keep ratio for the table (default 0.25)");
  t_cmd->callback([&to] { run_tables(to); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const resmoe::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
  return 0;
}
