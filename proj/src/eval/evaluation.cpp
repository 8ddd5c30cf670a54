#include "advdef/eval/evaluation.hpp"

#include "advdef/attacks/attacks.hpp"
#include "advdef/baselines/baselines.hpp"
#include "advdef/core/errors.hpp"
#include "advdef/core/seeding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace advdef::eval {

namespace fs = std::filesystem;

double accuracy(const DifferentiableClassifier& model, const ImageTensor& images, const torch::Tensor& labels) {
    if (!images.defined() || images.batch() == 0) {
        throw ContractError("accuracy: empty image set");
    }
    if (labels.dim() != 1 || labels.size(0) != images.batch()) {
        throw ContractError("accuracy: need one label per image");
    }
    const auto pred = classifier::predict_labels(model, images);
    const auto correct = pred.eq(labels.to(torch::kLong)).sum().item<int64_t>();
    return static_cast<double>(correct) / static_cast<double>(images.batch());
}

double mae(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "mae");
    return (a.tensor().to(torch::kDouble) - b.tensor().to(torch::kDouble)).abs().mean().item<double>();
}

std::string Psnr::str() const {
    if (infinite) {
        return "inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", db);
    return buf;
}

Psnr psnr(const ImageTensor& a, const ImageTensor& b, double max_value) {
    require_same_shape(a, b, "psnr");
    if (!(max_value > 0.0)) {
        throw ContractError("psnr: max_value must be > 0");
    }
    const double mse = (a.tensor().to(torch::kDouble) - b.tensor().to(torch::kDouble)).pow(2).mean().item<double>();
    if (mse == 0.0) {
        return {0.0, true};
    }
    return {10.0 * std::log10(max_value * max_value / mse), false};
}

NamedDefense identity_defense(std::string name) {
    return {std::move(name), [](const ImageTensor& x, uint64_t) { return x; }};
}

NamedDefense checkpoint_defense(std::string name, const defense::DefenseCheckpoint& checkpoint) {
    return {std::move(name), [&checkpoint](const ImageTensor& x, uint64_t) { return defense::reconstruct(checkpoint, x); }};
}

NamedDefense baseline_defense(std::string name, const baselines::BaselineSpec& spec) {
    return {std::move(name),
            [spec](const ImageTensor& x, uint64_t seed) { return baselines::apply_baseline(spec, x, seed); }};
}

std::vector<AttackedSet> generate_attacked_sets(const std::vector<attacks::AttackSpec>& specs,
                                                const data::LabeledImageSet& test,
                                                const DifferentiableClassifier& model, uint64_t seed) {
    std::vector<AttackedSet> out;
    for (const auto& spec : specs) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::string name(attacks::method_name(spec.method));
        auto r = attacks::run_attack(spec, model, test.images, test.labels, derive_seed(seed, "eval-attack:" + name));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "[eval] attacked test set with " << name << " in " << secs << " s\n";
        out.push_back({spec, name, r.adversarial, secs});
    }
    return out;
}

const Cell& Matrix::at(const std::string& row, const std::string& column) const {
    const auto r = std::find(rows.begin(), rows.end(), row);
    const auto c = std::find(columns.begin(), columns.end(), column);
    if (r == rows.end() || c == columns.end()) {
        throw ContractError("matrix '" + title + "': no cell (" + row + ", " + column + ")");
    }
    return cells[static_cast<size_t>(r - rows.begin())][static_cast<size_t>(c - columns.begin())];
}

std::optional<double> Matrix::column_average(const std::string& column) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : rows) {
        const auto& cell = at(row, column);
        if (cell.accuracy) {
            sum += *cell.accuracy;
            ++n;
        }
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / n;
}

std::optional<double> Matrix::column_mean(const std::string& column, const std::vector<std::string>& which) const {
    if (which.empty()) {
        return std::nullopt;
    }
    double sum = 0.0;
    for (const auto& row : which) {
        const auto& cell = at(row, column);
        if (!cell.accuracy) {
            return std::nullopt;
        }
        sum += *cell.accuracy;
    }
    return sum / static_cast<double>(which.size());
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string Matrix::to_csv() const {
    std::ostringstream out;
    out << "attack";
    for (const auto& c : columns) {
        out << ',' << c;
    }
    out << '\n';
    for (size_t r = 0; r < rows.size(); ++r) {
        const bool held = std::find(held_out.begin(), held_out.end(), rows[r]) != held_out.end();
        out << rows[r] << (held ? "*" : "");
        for (const auto& cell : cells[r]) {
            out << ',' << (cell.accuracy ? fmt(*cell.accuracy) : "skipped");
        }
        out << '\n';
    }
    out << "average";
    for (const auto& c : columns) {
        const auto avg = column_average(c);
        out << ',' << (avg ? fmt(*avg) : "skipped");
    }
    out << '\n';
    return out.str();
}

double SweepCurve::spread() const {
    if (accuracy.empty()) {
        return 0.0;
    }
    const auto [lo, hi] = std::minmax_element(accuracy.begin(), accuracy.end());
    return *hi - *lo;
}

namespace {

Cell evaluate_cell(const std::function<double()>& measure) {
    try {
        return {measure(), ""};
    } catch (const std::exception& e) {
        std::cerr << "[eval] cell skipped: " << e.what() << '\n';
        return {std::nullopt, e.what()};
    }
}

struct Column {
    std::string name;
    // (row index, input) -> accuracy; row 0 is the clean set.
    std::function<double(size_t, const ImageTensor&)> measure;
};

Matrix fill_matrix(std::string title, const std::vector<Column>& columns, const std::vector<AttackedSet>& attacked,
                   const data::LabeledImageSet& test, const std::vector<std::string>& held_out) {
    Matrix m;
    m.title = std::move(title);
    m.rows.push_back("clean");
    for (const auto& a : attacked) {
        m.rows.push_back(a.name);
    }
    for (const auto& c : columns) {
        m.columns.push_back(c.name);
    }
    m.held_out = held_out;
    for (size_t r = 0; r < m.rows.size(); ++r) {
        const ImageTensor& input = r == 0 ? test.images : attacked[r - 1].adversarial;
        std::vector<Cell> row;
        for (const auto& c : columns) {
            row.push_back(evaluate_cell([&] { return c.measure(r, input); }));
        }
        m.cells.push_back(std::move(row));
    }
    return m;
}

Column no_defense_column(const DifferentiableClassifier& model, const data::LabeledImageSet& test) {
    return {kNoDefense, [&model, &test](size_t, const ImageTensor& x) { return accuracy(model, x, test.labels); }};
}

Column defense_column(const NamedDefense& d, uint64_t seed, const DifferentiableClassifier& model,
                      const data::LabeledImageSet& test) {
    return {d.name, [d, seed, &model, &test](size_t row, const ImageTensor& x) {
                return accuracy(model, d.apply(x, derive_seed(seed, "cell:" + d.name, row)), test.labels);
            }};
}

}  // namespace

Matrix recovery_matrix(const std::vector<NamedDefense>& defenses, const std::vector<AttackedSet>& attacked,
                       const data::LabeledImageSet& test, const DifferentiableClassifier& model, uint64_t seed,
                       const std::vector<std::string>& held_out) {
    std::vector<Column> columns{no_defense_column(model, test)};
    for (const auto& d : defenses) {
        columns.push_back(defense_column(d, seed, model, test));
    }
    return fill_matrix("recovery", columns, attacked, test, held_out);
}

Matrix recovery_matrix(const std::vector<NamedDefense>& defenses, const std::vector<attacks::AttackSpec>& specs,
                       const data::LabeledImageSet& test, const DifferentiableClassifier& model, uint64_t seed,
                       const std::vector<std::string>& held_out) {
    return recovery_matrix(defenses, generate_attacked_sets(specs, test, model, seed), test, model, seed, held_out);
}

Matrix compare_defenses(const Comparison& defenses, const std::vector<AttackedSet>& attacked,
                        const data::LabeledImageSet& test, const DifferentiableClassifier& model, uint64_t seed,
                        const std::vector<std::string>& held_out) {
    std::vector<Column> columns{no_defense_column(model, test)};
    if (defenses.versatile != nullptr) {
        columns.push_back(defense_column(checkpoint_defense(kVersatile, *defenses.versatile), seed, model, test));
    }
    if (!defenses.specific.empty()) {
        const auto specific = defenses.specific;
        columns.push_back({kSpecific, [specific, &attacked, &model, &test](size_t r, const ImageTensor& x) {
                               if (r > 0) {
                                   for (const auto& [method, ck] : specific) {
                                       if (method == attacked[r - 1].spec.method) {
                                           return accuracy(model, defense::reconstruct(*ck, x), test.labels);
                                       }
                                   }
                               }
                               // no model of its own: mean over every specific model
                               double sum = 0.0;
                               for (const auto& entry : specific) {
                                   sum += accuracy(model, defense::reconstruct(*entry.second, x), test.labels);
                               }
                               return sum / static_cast<double>(specific.size());
                           }});
    }
    if (defenses.fixed_weight != nullptr) {
        columns.push_back(
            defense_column(checkpoint_defense(kFixedWeight, *defenses.fixed_weight), seed, model, test));
    }
    for (const auto& spec : defenses.baselines) {
        columns.push_back(defense_column(
            baseline_defense(std::string(baselines::baseline_name(spec.method)), spec), seed, model, test));
    }
    return fill_matrix("comparison", columns, attacked, test, held_out);
}

std::vector<FidelityRow> fidelity(const NamedDefense& defense, const std::vector<AttackedSet>& attacked,
                                  const data::LabeledImageSet& test, uint64_t seed) {
    std::vector<FidelityRow> rows;
    auto add = [&](const std::string& name, const ImageTensor& input, size_t r) {
        const auto restored = defense.apply(input, derive_seed(seed, "cell:" + defense.name, r));
        rows.push_back({name, mae(input, test.images), mae(restored, test.images), psnr(input, test.images),
                        psnr(restored, test.images)});
    };
    add("clean", test.images, 0);
    for (size_t i = 0; i < attacked.size(); ++i) {
        add(attacked[i].name, attacked[i].adversarial, i + 1);
    }
    return rows;
}

std::vector<SweepCurve> robustness_sweep(const NamedDefense& defense, attacks::AttackMethod family,
                                         const std::vector<int>& iterations, const std::vector<double>& epsilons,
                                         double step, const data::LabeledImageSet& test,
                                         const DifferentiableClassifier& model, uint64_t seed) {
    if (iterations.empty() || !std::is_sorted(iterations.begin(), iterations.end()) ||
        std::adjacent_find(iterations.begin(), iterations.end()) != iterations.end() || iterations.front() < 1) {
        throw ConfigError("evaluation.sweep_iterations must be positive and strictly increasing");
    }
    if (family != attacks::AttackMethod::Pgd && family != attacks::AttackMethod::MiFgsm &&
        family != attacks::AttackMethod::Bim) {
        throw ConfigError("evaluation.sweep_families: only pgd, bim and mifgsm can be swept");
    }
    const std::string fname(attacks::method_name(family));
    std::vector<SweepCurve> curves;
    for (size_t e = 0; e < epsilons.size(); ++e) {
        auto spec = attacks::AttackSpec::defaults(family, epsilons[e]);
        spec.eps_iter = step;
        spec.nb_iter = iterations.back();
        spec.validate();
        SweepCurve curve{fname, epsilons[e], iterations, {}, {}};
        const uint64_t attack_seed = derive_seed(seed, "sweep:" + fname, e);
        const int64_t chunk = 250;
        std::vector<std::vector<ImageTensor>> snapshots(iterations.size());
        for (int64_t b = 0; b < test.size(); b += chunk) {
            const int64_t end = std::min(test.size(), b + chunk);
            attacks::AttackContext ctx;
            ctx.seed = derive_seed(attack_seed, fname);
            ctx.first_index = b;
            ctx.observer = [&](int k, const torch::Tensor& xk) {
                const auto it = std::find(iterations.begin(), iterations.end(), k);
                if (it != iterations.end()) {
                    snapshots[static_cast<size_t>(it - iterations.begin())].push_back(
                        ImageTensor::clamped(xk.detach().clone()));
                }
            };
            const auto x = test.images.slice(b, end);
            const auto y = test.labels.slice(0, b, end);
            if (family == attacks::AttackMethod::MiFgsm) {
                attacks::mifgsm(model, x, y, spec, ctx);
            } else {
                attacks::pgd(model, x, y, spec, family == attacks::AttackMethod::Pgd && spec.random_init, ctx);
            }
        }
        for (size_t k = 0; k < iterations.size(); ++k) {
            const auto adv = ImageTensor::concat(snapshots[k]);
            curve.no_defense.push_back(accuracy(model, adv, test.labels));
            curve.accuracy.push_back(
                accuracy(model, defense.apply(adv, derive_seed(seed, "sweep-cell:" + fname, e * 1000 + k)),
                         test.labels));
        }
        std::cerr << "[eval] sweep " << fname << " eps " << epsilons[e] << " spread " << curve.spread() << '\n';
        curves.push_back(std::move(curve));
    }
    return curves;
}

void to_json(nlohmann::json& j, const Psnr& p) {
    j = p.infinite ? nlohmann::json("inf") : nlohmann::json(p.db);
}

void from_json(const nlohmann::json& j, Psnr& p) {
    if (j.is_string()) {
        if (j.get<std::string>() != "inf") {
            throw IoError("psnr: unknown sentinel " + j.get<std::string>());
        }
        p = {0.0, true};
    } else {
        p = {j.get<double>(), false};
    }
}

void to_json(nlohmann::json& j, const Cell& c) {
    if (c.accuracy) {
        j = *c.accuracy;
    } else {
        j = {{"skipped", c.reason}};
    }
}

void from_json(const nlohmann::json& j, Cell& c) {
    if (j.is_number()) {
        c = {j.get<double>(), ""};
    } else {
        c = {std::nullopt, j.at("skipped").get<std::string>()};
    }
}

void to_json(nlohmann::json& j, const Matrix& m) {
    j = {{"title", m.title}, {"rows", m.rows}, {"columns", m.columns}, {"cells", m.cells}, {"held_out", m.held_out}};
}

void from_json(const nlohmann::json& j, Matrix& m) {
    j.at("title").get_to(m.title);
    j.at("rows").get_to(m.rows);
    j.at("columns").get_to(m.columns);
    j.at("cells").get_to(m.cells);
    j.at("held_out").get_to(m.held_out);
}

void to_json(nlohmann::json& j, const FidelityRow& r) {
    j = {{"attack", r.attack},
         {"mae_attacked", r.mae_attacked},
         {"mae_restored", r.mae_restored},
         {"psnr_attacked", r.psnr_attacked},
         {"psnr_restored", r.psnr_restored}};
}

void from_json(const nlohmann::json& j, FidelityRow& r) {
    j.at("attack").get_to(r.attack);
    j.at("mae_attacked").get_to(r.mae_attacked);
    j.at("mae_restored").get_to(r.mae_restored);
    j.at("psnr_attacked").get_to(r.psnr_attacked);
    j.at("psnr_restored").get_to(r.psnr_restored);
}

void to_json(nlohmann::json& j, const SweepCurve& c) {
    j = {{"family", c.family},
         {"epsilon", c.epsilon},
         {"iterations", c.iterations},
         {"accuracy", c.accuracy},
         {"no_defense", c.no_defense}};
}

void from_json(const nlohmann::json& j, SweepCurve& c) {
    j.at("family").get_to(c.family);
    j.at("epsilon").get_to(c.epsilon);
    j.at("iterations").get_to(c.iterations);
    j.at("accuracy").get_to(c.accuracy);
    j.at("no_defense").get_to(c.no_defense);
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
    j = {{"config_hash", r.config_hash},     {"seed", r.seed},
         {"test_images", r.test_images},     {"clean_accuracy", r.clean_accuracy},
         {"no_defense", r.no_defense},       {"recovery", r.recovery},
         {"comparison", r.comparison},       {"fidelity", r.fidelity},
         {"sweeps", r.sweeps},               {"phase_seconds", r.phase_seconds}};
}

void from_json(const nlohmann::json& j, EvaluationReport& r) {
    j.at("config_hash").get_to(r.config_hash);
    j.at("seed").get_to(r.seed);
    j.at("test_images").get_to(r.test_images);
    j.at("clean_accuracy").get_to(r.clean_accuracy);
    j.at("no_defense").get_to(r.no_defense);
    j.at("recovery").get_to(r.recovery);
    j.at("comparison").get_to(r.comparison);
    j.at("fidelity").get_to(r.fidelity);
    j.at("sweeps").get_to(r.sweeps);
    j.at("phase_seconds").get_to(r.phase_seconds);
}

namespace {

void write_text(const fs::path& file, const std::string& text, std::vector<fs::path>& written) {
    std::ofstream out(file, std::ios::binary);
    if (!out || !(out << text)) {
        std::ostringstream msg;
        msg << "cannot write " << file.string() << "; already written:";
        for (const auto& w : written) {
            msg << ' ' << w.string();
        }
        throw IoError(msg.str());
    }
    written.push_back(file);
}

std::string sweeps_csv(const std::vector<SweepCurve>& sweeps) {
    std::ostringstream out;
    out << "family,epsilon,iterations,recovered_accuracy,no_defense_accuracy\n";
    for (const auto& c : sweeps) {
        for (size_t k = 0; k < c.iterations.size(); ++k) {
            out << c.family << ',' << fmt(c.epsilon) << ',' << c.iterations[k] << ',' << fmt(c.accuracy[k]) << ','
                << fmt(c.no_defense[k]) << '\n';
        }
    }
    return out.str();
}

}  // namespace

std::vector<fs::path> export_report(const EvaluationReport& report, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    std::vector<fs::path> written;
    const std::string prefix = report.config_hash.empty() ? "report" : report.config_hash;
    write_text(dir / (prefix + "-report.json"), nlohmann::json(report).dump(2) + "\n", written);
    if (!report.recovery.rows.empty()) {
        write_text(dir / (prefix + "-recovery.csv"), report.recovery.to_csv(), written);
    }
    if (!report.comparison.rows.empty()) {
        write_text(dir / (prefix + "-comparison.csv"), report.comparison.to_csv(), written);
    }
    if (!report.sweeps.empty()) {
        write_text(dir / (prefix + "-sweeps.csv"), sweeps_csv(report.sweeps), written);
    }
    return written;
}

EvaluationReport import_report(const fs::path& report_json) {
    std::ifstream in(report_json);
    if (!in) {
        throw IoError("cannot read " + report_json.string());
    }
    try {
        return nlohmann::json::parse(in).get<EvaluationReport>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt report " + report_json.string() + ": " + e.what());
    }
}

}  // namespace advdef::eval
