#include "hsinpaint/cli.hpp"

#include "hsinpaint/errors.hpp"
#include "hsinpaint/solver.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

namespace hsi {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw io_error("sha256: digest failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

static std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw io_error("cannot read " + p.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_bytes(path)); }

namespace {

// Hash of a header + payload pair, or of a single file.
std::string artifact_hash(const fs::path& p) {
    if (fs::exists(header_path(p)) && fs::exists(payload_path(p)))
        return sha256_hex(read_bytes(header_path(p)) + read_bytes(payload_path(p)));
    return sha256_hex(read_bytes(p));
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw io_error("cannot write " + p.string());
    f << s;
    if (!f) throw io_error("short write to " + p.string());
}

void ensure_dir(const fs::path& d) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw io_error("cannot create directory " + d.string() + ": " + ec.message());
}

void require_input(const std::string& p, const char* what) {
    if (p.empty()) throw usage_error(std::string("missing --") + what);
    fs::path base(p);
    if (!fs::exists(base) && !fs::exists(header_path(base)))
        throw io_error(std::string(what) + " not found: " + p);
}

struct Manifest {
    std::string command;
    json config = nullptr;
    std::vector<std::pair<std::string, std::string>> inputs;  // name, path
    std::vector<std::string> outputs;

    void write(const fs::path& dir) const {
        json in = json::object();
        for (const auto& [name, path] : inputs) in[name] = {{"path", path}, {"sha256", artifact_hash(path)}};
        json m = {{"tool", "hsinpaint"},
                  {"version", kToolVersion},
                  {"command", command},
                  {"config_sha256", config.is_null() ? json(nullptr) : json(sha256_hex(config.dump()))},
                  {"config", config},
                  {"inputs", in},
                  {"outputs", outputs}};
        write_text(dir / "manifest.json", m.dump(2) + "\n");
    }
};

json value_from_text(const std::string& v) {
    try {
        return json::parse(v);
    } catch (const json::exception&) {
        return json(v);
    }
}

// defaults < config file < --set overrides < dedicated flags
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;

    void add(CLI::App* sc) {
        sc->add_option("--config", config_path, "JSON solver config");
        sc->add_option("--set", sets, "override a config key: key=value (repeatable)");
    }
    SolverConfig build() const {
        SolverConfig cfg;
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw io_error("config not found: " + config_path);
            json j;
            try {
                j = json::parse(read_bytes(config_path));
            } catch (const json::exception& e) {
                throw usage_error("config is not valid JSON: " + std::string(e.what()));
            }
            config_from_json(j, cfg);
        }
        json o = json::object();
        for (const auto& s : sets) {
            auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw usage_error("--set expects key=value, got '" + s + "'");
            o[s.substr(0, eq)] = value_from_text(s.substr(eq + 1));
        }
        config_from_json(o, cfg);
        return cfg;
    }
};

std::string fmt_cell(double v) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

std::string fmt_weight(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- subcommands

struct SynthArgs {
    int rows = 8, cols = 8, bands = 16, rank = 2;
    std::string mask = "random_pixels";
    double fraction = 0.1, sigma = 0.12;
    std::uint64_t seed = 0;
    std::string out = ".";
};

int cmd_synth(const SynthArgs& a) {
    if (a.rows < 1 || a.cols < 1 || a.bands < 1) throw usage_error("rows, cols and bands must be positive");
    if (a.rank < 1 || a.rank > std::min<long>(long(a.rows) * a.cols, a.bands))
        throw usage_error("rank must lie in [1, min(rows*cols, bands)]");
    if (!(a.fraction > 0.0 && a.fraction < 1.0)) throw usage_error("fraction must lie in (0, 1)");
    if (!(a.sigma >= 0.0)) throw usage_error("sigma must be non-negative");
    const MaskKind kind = parse_mask_kind(a.mask);
    ensure_dir(a.out);
    const fs::path dir(a.out);
    HsiCube truth = synth_lowrank_cube(a.rows, a.cols, a.bands, a.rank, a.seed);
    MaskCube mask = make_mask(a.rows, a.cols, a.bands, kind, a.fraction, a.seed + 1);
    HsiCube obs = add_gaussian_noise(apply_mask(truth, mask), a.sigma, a.seed + 2);
    obs.data = mask.as_real().cwiseProduct(obs.data);
    save_cube(truth, dir / "truth");
    save_mask(mask, dir / "mask");
    save_cube(obs, dir / "observed");
    Manifest m;
    m.command = "synth";
    m.config = {{"rows", a.rows},     {"cols", a.cols},   {"bands", a.bands}, {"rank", a.rank},
                {"mask", a.mask},     {"fraction", a.fraction}, {"sigma", a.sigma}, {"seed", a.seed}};
    m.outputs = {"truth.json", "truth.bin", "mask.json", "mask.bin", "observed.json", "observed.bin"};
    m.write(dir);
    std::cout << "mpsnr(observed, truth) = " << mpsnr(truth, obs) << " dB\n";
    return 0;
}

struct DictArgs {
    std::string input, mask, out = ".";
    ConfigArgs conf;
};

int cmd_dictlearn(const DictArgs& a) {
    require_input(a.input, "input");
    require_input(a.mask, "mask");
    SolverConfig cfg = a.conf.build();
    cfg.validate();
    HsiCube y = load_cube(a.input);
    MaskCube M = load_mask(a.mask);
    if (!M.same_shape(y)) throw shape_error("mask shape does not match the input");
    auto r = learn_dictionary(y, M, cfg);
    ensure_dir(a.out);
    const fs::path dir(a.out);
    save_dictionary(r.dict, dir / "dictionary");
    json rep = {{"config", config_to_json(cfg)},
                {"epoch_objective", r.epoch_objective},
                {"reseeded", r.reseeded},
                {"reverted", r.reverted}};
    write_text(dir / "dictlearn_report.json", rep.dump(2) + "\n");
    Manifest m;
    m.command = "dictlearn";
    m.config = config_to_json(cfg);
    m.inputs = {{"input", a.input}, {"mask", a.mask}};
    m.outputs = {"dictionary.json", "dictionary.bin", "dictlearn_report.json"};
    m.write(dir);
    return 0;
}

struct InpaintArgs {
    std::string input, mask, dict, truth, weights, out = ".";
    std::string branch;
    std::optional<std::uint64_t> seed;
    std::optional<int> max_iters;
    bool theory_mode = false;
    bool no_early_stop = false;
    ConfigArgs conf;
};

SolverConfig inpaint_config(const InpaintArgs& a) {
    SolverConfig cfg = a.conf.build();
    if (!a.branch.empty()) cfg.branch = parse_branch(a.branch);
    if (a.seed) cfg.seed = *a.seed;
    if (a.max_iters) cfg.max_outer_iters = *a.max_iters;
    if (a.theory_mode) cfg.theory_mode = true;
    if (a.no_early_stop) cfg.early_stop = false;
    cfg.validate();
    return cfg;
}

int cmd_inpaint(const InpaintArgs& a) {
    require_input(a.input, "input");
    require_input(a.mask, "mask");
    require_input(a.dict, "dict");
    if (!a.truth.empty()) require_input(a.truth, "truth");
    if (!a.weights.empty()) require_input(a.weights, "weights");
    const SolverConfig cfg = inpaint_config(a);
    if (!a.weights.empty() && cfg.branch != Branch::Dip) throw usage_error("--weights requires the dip branch");

    HsiCube y = load_cube(a.input);
    MaskCube M = load_mask(a.mask);
    Dictionary phi = load_dictionary(a.dict);
    std::optional<HsiCube> truth;
    if (!a.truth.empty()) truth = load_cube(a.truth);
    const HsiCube* tp = truth ? &*truth : nullptr;

    SolveResult r;
    if (cfg.branch == Branch::Dip && !a.weights.empty()) {
        Network net = load_network(a.weights);
        r = run_lrs_pnp_dip(y, M, phi, net, cfg, tp);
    } else {
        r = solve(y, M, phi, cfg, tp);
    }

    ensure_dir(a.out);
    const fs::path dir(a.out);
    save_cube(r.x, dir / "recon");
    write_text(dir / "trace.csv", r.trace.to_csv());
    json rep = report_json(cfg, r);
    if (truth) rep["input_mpsnr"] = mpsnr(*truth, y);
    write_text(dir / "report.json", rep.dump(2) + "\n");
    Manifest m;
    m.command = "inpaint";
    m.config = config_to_json(cfg);
    m.inputs = {{"input", a.input}, {"mask", a.mask}, {"dict", a.dict}};
    if (!a.truth.empty()) m.inputs.emplace_back("truth", a.truth);
    if (!a.weights.empty()) m.inputs.emplace_back("weights", a.weights);
    m.outputs = {"recon.json", "recon.bin", "trace.csv", "report.json"};
    m.write(dir);
    if (r.quality) std::cout << "mpsnr = " << r.quality->mpsnr << " dB\n";
    std::cout << "stop: " << r.stop_reason << " after " << r.iterations << " iterations\n";
    return 0;
}

struct AblateArgs {
    std::string input, mask, truth, dict, out = ".";
    std::vector<double> ws{0.0, 0.5, 1.0}, wlr{0.0, 0.5, 1.0};
    int jobs = 0;
    std::string branch;
    bool theory_mode = false;
    ConfigArgs conf;
};

int cmd_ablate(const AblateArgs& a) {
    require_input(a.input, "input");
    require_input(a.mask, "mask");
    require_input(a.truth, "truth");
    if (!a.dict.empty()) require_input(a.dict, "dict");
    if (a.ws.empty() || a.wlr.empty()) throw usage_error("ablation grid must be non-empty");
    SolverConfig base = a.conf.build();
    if (!a.branch.empty()) base.branch = parse_branch(a.branch);
    if (a.theory_mode) base.theory_mode = true;
    base.validate();
    for (double v : a.ws)
        if (v < 0) throw usage_error("w_s values must be non-negative");
    for (double v : a.wlr)
        if (v < 0) throw usage_error("w_lr values must be non-negative");

    const HsiCube y = load_cube(a.input);
    const MaskCube M = load_mask(a.mask);
    const HsiCube truth = load_cube(a.truth);
    const Dictionary phi = a.dict.empty() ? learn_dictionary(y, M, base).dict : load_dictionary(a.dict);
    ensure_dir(a.out);
    const fs::path dir(a.out);

    const std::size_t n = a.ws.size() * a.wlr.size();
    std::vector<double> table(n, std::nan(""));
    std::vector<std::string> errors(n);
    auto cell_dir = [&](std::size_t i) {
        return dir / ("cell_ws" + fmt_weight(a.ws[i / a.wlr.size()]) + "_wlr" + fmt_weight(a.wlr[i % a.wlr.size()]));
    };
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < n;) {
            SolverConfig cfg = base;
            cfg.w_s = a.ws[i / a.wlr.size()];
            cfg.w_lr = a.wlr[i % a.wlr.size()];
            try {
                SolveResult r = solve(y, M, phi, cfg, &truth);
                const fs::path cd = cell_dir(i);
                ensure_dir(cd);
                write_text(cd / "trace.csv", r.trace.to_csv());
                write_text(cd / "report.json", report_json(cfg, r).dump(2) + "\n");
                table[i] = r.quality->mpsnr;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const unsigned jobs = a.jobs > 0 ? unsigned(a.jobs) : std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(jobs, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ostringstream csv;
    csv << "w_s\\w_lr";
    for (double v : a.wlr) csv << ',' << fmt_weight(v);
    csv << '\n';
    for (std::size_t r = 0; r < a.ws.size(); ++r) {
        csv << fmt_weight(a.ws[r]);
        for (std::size_t c = 0; c < a.wlr.size(); ++c) csv << ',' << fmt_cell(table[r * a.wlr.size() + c]);
        csv << '\n';
    }
    write_text(dir / "ablation.csv", csv.str());
    Manifest m;
    m.command = "ablate";
    m.config = config_to_json(base);
    m.config["grid_w_s"] = a.ws;
    m.config["grid_w_lr"] = a.wlr;
    m.inputs = {{"input", a.input}, {"mask", a.mask}, {"truth", a.truth}};
    if (!a.dict.empty()) m.inputs.emplace_back("dict", a.dict);
    m.outputs = {"ablation.csv"};
    for (std::size_t i = 0; i < n; ++i)
        if (errors[i].empty()) m.outputs.push_back(cell_dir(i).filename().string());
    m.write(dir);
    std::cout << "input mpsnr = " << mpsnr(truth, y) << " dB\n" << csv.str();
    std::size_t failed = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (!errors[i].empty()) {
            ++failed;
            std::cerr << "cell " << cell_dir(i).filename().string() << " failed: " << errors[i] << '\n';
        }
    if (failed == n) throw numerical_error("every ablation cell failed");
    return 0;
}

struct CertifyArgs {
    std::string net, nlm, out;
    bool fresh_net = false;
    int bands = 16, rows = 8, cols = 8;
    std::uint64_t seed = 0;
    double nlm_scale = 1.0;
    int trials = 200;
    ConfigArgs conf;
};

int cmd_certify(const CertifyArgs& a) {
    const int targets = int(!a.net.empty()) + int(a.fresh_net) + int(!a.nlm.empty());
    if (targets == 0) throw usage_error("certify needs at least one of --net, --fresh-net, --nlm");
    if (a.trials < 1) throw usage_error("--trials must be >= 1");
    if (!(a.nlm_scale > 0)) throw usage_error("--nlm-scale must be positive");
    json rep = json::object();
    bool ok = true;
    Manifest m;
    m.command = "certify";
    if (!a.net.empty() || a.fresh_net) {
        if (!a.net.empty()) require_input(a.net, "net");
        Network net = !a.net.empty() ? load_network(a.net) : make_dip_network(a.bands, a.rows, a.cols, a.seed);
        auto lr = certify_lipschitz(net, a.trials, a.seed);
        rep["lipschitz"] = json::parse(lr.to_json());
        ok = ok && lr.pass;
        if (!a.net.empty()) m.inputs.emplace_back("net", a.net);
    }
    if (!a.nlm.empty()) {
        require_input(a.nlm, "nlm");
        SolverConfig cfg = a.conf.build();
        cfg.validate();
        HsiCube x = load_cube(a.nlm);
        auto layout = solver_layout(x, cfg);
        AveragedDenoiser D = patch_domain_denoiser(extract_all_patches(x, layout), layout, x.bands, cfg);
        const Eigen::Index n = D.size();
        Eigen::MatrixXd op = (1.0 - D.theta) * Eigen::MatrixXd::Identity(n, n) + D.theta * a.nlm_scale * D.W;
        auto nr = certify_nonexpansive(op, D.theta, a.trials, a.seed);
        rep["nonexpansive"] = json::parse(nr.to_json());
        rep["nonexpansive"]["weight_scale"] = a.nlm_scale;
        ok = ok && nr.pass;
        m.inputs.emplace_back("nlm", a.nlm);
        m.config = config_to_json(cfg);
    }
    rep["pass"] = ok;
    std::cout << rep.dump(2) << '\n';
    if (!a.out.empty()) {
        ensure_dir(a.out);
        write_text(fs::path(a.out) / "certify_report.json", rep.dump(2) + "\n");
        m.outputs = {"certify_report.json"};
        m.write(a.out);
    }
    if (!ok) throw certification_error("certification FAILED");
    return 0;
}

struct MetricsArgs {
    std::string truth, input, out;
};

int cmd_metrics(const MetricsArgs& a) {
    require_input(a.truth, "truth");
    require_input(a.input, "input");
    HsiCube ref = load_cube(a.truth), test = load_cube(a.input);
    if (!ref.same_shape(test)) throw shape_error("truth and input shapes differ");
    QualityReport q = quality(ref, test);
    json j = {{"mpsnr", q.mpsnr},
              {"mssim", std::isfinite(q.mssim) ? json(q.mssim) : json(nullptr)},
              {"msam", q.msam},
              {"msam_warning", q.msam_warning}};
    std::cout << j.dump(2) << '\n';
    if (!a.out.empty()) {
        ensure_dir(a.out);
        write_text(fs::path(a.out) / "metrics.json", j.dump(2) + "\n");
        Manifest m;
        m.command = "metrics";
        m.inputs = {{"truth", a.truth}, {"input", a.input}};
        m.outputs = {"metrics.json"};
        m.write(a.out);
    }
    return 0;
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Certification: return 3;
        case ErrorKind::Numerical: return 4;
        default: return 2;
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Hyperspectral inpainting toolkit"};
    app.require_subcommand(1);

    SynthArgs sy;
    auto* s = app.add_subcommand("synth", "generate a low-rank cube, mask and noisy observation");
    s->add_option("--rows", sy.rows);
    s->add_option("--cols", sy.cols);
    s->add_option("--bands", sy.bands);
    s->add_option("--rank", sy.rank);
    s->add_option("--mask", sy.mask, "stripes | block | random_pixels | text");
    s->add_option("--fraction", sy.fraction, "masked fraction in (0, 1)");
    s->add_option("--sigma", sy.sigma, "noise standard deviation");
    s->add_option("--seed", sy.seed);
    s->add_option("--out", sy.out, "output directory");

    DictArgs da;
    auto* d = app.add_subcommand("dictlearn", "learn a patch dictionary from an observation");
    d->add_option("--input", da.input)->required();
    d->add_option("--mask", da.mask)->required();
    d->add_option("--out", da.out);
    da.conf.add(d);

    InpaintArgs ia;
    auto* in = app.add_subcommand("inpaint", "run one solve");
    in->add_option("--input", ia.input)->required();
    in->add_option("--mask", ia.mask)->required();
    in->add_option("--dict", ia.dict)->required();
    in->add_option("--truth", ia.truth, "ground truth for metrics");
    in->add_option("--weights", ia.weights, "network checkpoint (dip branch)");
    in->add_option("--out", ia.out);
    in->add_option("--branch", ia.branch, "svt | dip");
    in->add_option("--seed", ia.seed);
    in->add_option("--max-iters", ia.max_iters);
    in->add_flag("--theory-mode", ia.theory_mode, "freeze the penalties (rho = 1)");
    in->add_flag("--no-early-stop", ia.no_early_stop);
    ia.conf.add(in);

    AblateArgs ab;
    auto* ap = app.add_subcommand("ablate", "MPSNR grid over (w_s, w_lr)");
    ap->add_option("--input", ab.input)->required();
    ap->add_option("--mask", ab.mask)->required();
    ap->add_option("--truth", ab.truth)->required();
    ap->add_option("--dict", ab.dict, "dictionary (learned from the input when omitted)");
    ap->add_option("--out", ab.out);
    ap->add_option("--ws", ab.ws, "w_s grid values")->delimiter(',');
    ap->add_option("--wlr", ab.wlr, "w_lr grid values")->delimiter(',');
    ap->add_option("--jobs", ab.jobs, "worker threads (0 = hardware concurrency)");
    ap->add_option("--branch", ab.branch, "svt | dip");
    ap->add_flag("--theory-mode", ab.theory_mode);
    ab.conf.add(ap);

    CertifyArgs ca;
    auto* c = app.add_subcommand("certify", "certify denoiser averagedness and/or network Lipschitz bound");
    c->add_option("--net", ca.net, "network checkpoint");
    c->add_flag("--fresh-net", ca.fresh_net, "certify a freshly initialised DIP network");
    c->add_option("--bands", ca.bands);
    c->add_option("--rows", ca.rows);
    c->add_option("--cols", ca.cols);
    c->add_option("--nlm", ca.nlm, "cube whose patches guide the NLM denoiser");
    c->add_option("--nlm-scale", ca.nlm_scale, "multiply the NLM weight matrix (sabotage check)");
    c->add_option("--trials", ca.trials);
    c->add_option("--seed", ca.seed);
    c->add_option("--out", ca.out);
    ca.conf.add(c);

    MetricsArgs ma;
    auto* mt = app.add_subcommand("metrics", "MPSNR / MSSIM / MSAM of a cube against ground truth");
    mt->add_option("--truth", ma.truth)->required();
    mt->add_option("--input", ma.input)->required();
    mt->add_option("--out", ma.out);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (*s) return cmd_synth(sy);
        if (*d) return cmd_dictlearn(da);
        if (*in) return cmd_inpaint(ia);
        if (*ap) return cmd_ablate(ab);
        if (*c) return cmd_certify(ca);
        if (*mt) return cmd_metrics(ma);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace hsi
