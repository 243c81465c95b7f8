#include "latentfuse/eval/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "latentfuse/eval/metrics.hpp"

namespace latentfuse::eval {

namespace nk = latentfuse::numkit;

int knn_classify(std::span<const double> query, std::span<const LabeledLatent> support, std::size_t k) {
    if (support.empty()) throw std::invalid_argument("knn_classify: empty support set");
    if (k == 0 || k > support.size()) throw std::invalid_argument("knn_classify: k must be in [1, |support|]");
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) {
        const auto& z = support[i].z;
        if (z.size() != query.size()) throw nk::ShapeError("knn_classify: dimension mismatch");
        double s = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) s += (z[j] - query[j]) * (z[j] - query[j]);
        dist.emplace_back(std::sqrt(s), i);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    std::map<int, std::pair<int, double>> votes;  // label -> (count, distance sum)
    for (std::size_t i = 0; i < k; ++i) {
        auto& v = votes[support[dist[i].second].label];
        v.first += 1;
        v.second += dist[i].first;
    }
    int best = 0;
    int best_count = -1;
    double best_mean = 0.0;
    for (const auto& [label, v] : votes) {
        const double mean = v.second / v.first;
        if (v.first > best_count || (v.first == best_count && mean < best_mean)) {
            best = label;
            best_count = v.first;
            best_mean = mean;
        }
    }
    return best;
}

std::vector<int> knn_classify_all(std::span<const std::vector<double>> queries,
                                  std::span<const LabeledLatent> support, std::size_t k) {
    std::vector<int> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(knn_classify(q, support, k));
    return out;
}

std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::single_modality_1: return "single_modality_1";
        case BaselineKind::single_modality_2: return "single_modality_2";
        case BaselineKind::probability_fusion: return "probability_fusion";
        case BaselineKind::dual_branch: return "dual_branch";
    }
    return "?";
}

BaselineKind baseline_kind_from_string(const std::string& name) {
    if (name == "single_modality_1" || name == "sm1") return BaselineKind::single_modality_1;
    if (name == "single_modality_2" || name == "sm2") return BaselineKind::single_modality_2;
    if (name == "probability_fusion" || name == "prob_fusion") return BaselineKind::probability_fusion;
    if (name == "dual_branch") return BaselineKind::dual_branch;
    throw std::invalid_argument("unknown baseline kind: " + name);
}

BaselineModel BaselineModel::create(BaselineKind kind, std::size_t signal_dim, const BaselineConfig& config,
                                    Rng& rng) {
    if (config.n_classes < 2) throw std::invalid_argument("baseline needs at least two classes");
    if (config.hidden == 0 || config.epochs < 0 || !(config.learning_rate > 0.0)) {
        throw std::invalid_argument("invalid baseline configuration");
    }
    BaselineModel m;
    m.kind_ = kind;
    m.config_ = config;
    const auto classes = static_cast<std::size_t>(config.n_classes);
    switch (kind) {
        case BaselineKind::single_modality_1:
        case BaselineKind::single_modality_2:
            m.trunks_.emplace_back(signal_dim, config.hidden);
            m.heads_.emplace_back(config.hidden, classes);
            break;
        case BaselineKind::probability_fusion:
            for (int b = 0; b < 2; ++b) {
                m.trunks_.emplace_back(signal_dim, config.hidden);
                m.heads_.emplace_back(config.hidden, classes);
            }
            break;
        case BaselineKind::dual_branch:
            m.trunks_.emplace_back(signal_dim, config.hidden);
            m.trunks_.emplace_back(signal_dim, config.hidden);
            m.heads_.emplace_back(2 * config.hidden, classes);
            break;
    }
    for (auto& t : m.trunks_) t.init(rng);
    for (auto& h : m.heads_) h.init(rng);
    return m;
}

std::vector<Tensor*> BaselineModel::parameters() {
    std::vector<Tensor*> out;
    for (auto& t : trunks_) t.collect(out);
    for (auto& h : heads_) h.collect(out);
    return out;
}

namespace {

std::size_t input_modality(BaselineKind kind, std::size_t branch) {
    if (kind == BaselineKind::single_modality_1) return 0;
    if (kind == BaselineKind::single_modality_2) return 1;
    return branch;
}

void check_signals(std::span<const Tensor> signals, std::size_t rows) {
    if (signals.size() < 2) throw nk::ShapeError("baselines expect two modalities");
    for (const auto& s : signals)
        if (s.rows() != rows) throw nk::ShapeError("baseline inputs must have one row per sample");
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) z += p(r, c) = std::exp(logits(r, c) - mx);
        for (std::size_t c = 0; c < logits.cols(); ++c) p(r, c) /= z;
    }
    return p;
}

}  // namespace

double BaselineModel::fit(std::span<const Tensor> signals, std::span<const int> labels) {
    check_signals(signals, labels.size());
    if (labels.empty()) throw std::invalid_argument("baseline fit needs labelled samples");
    for (int l : labels)
        if (l < 0 || l >= config_.n_classes) throw std::out_of_range("label outside the class range");

    nk::OptimState state;
    state.kind = nk::OptimizerKind::adam;
    state.learning_rate = config_.learning_rate;
    state.weight_decay = config_.weight_decay;
    auto params = parameters();
    double last = 0.0;
    nk::Tape tape;
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        nk::zero_grads(params);
        Var loss;
        if (kind_ == BaselineKind::dual_branch) {
            Var h0 = nk::tanh(trunks_[0].forward(tape.constant_ref(signals[0])));
            Var h1 = nk::tanh(trunks_[1].forward(tape.constant_ref(signals[1])));
            loss = nk::softmax_cross_entropy(heads_[0].forward(nk::concat_cols(h0, h1)), labels);
        } else {
            // Probability fusion: branches share no weights, so the summed loss
            // trains them independently.
            for (std::size_t b = 0; b < trunks_.size(); ++b) {
                Var x = tape.constant_ref(signals[input_modality(kind_, b)]);
                Var term = nk::softmax_cross_entropy(heads_[b].forward(nk::tanh(trunks_[b].forward(x))), labels);
                loss = loss.valid() ? nk::add(loss, term) : term;
            }
        }
        last = loss.value().item();
        tape.backward(loss);
        nk::opt_step(state, params);
    }
    return last;
}

std::vector<Tensor> BaselineModel::branch_proba(std::span<const Tensor> signals) const {
    check_signals(signals, signals.empty() ? 0 : signals[0].rows());
    nk::Tape tape;
    std::vector<Tensor> out;
    if (kind_ == BaselineKind::dual_branch) {
        Var h0 = nk::tanh(trunks_[0].forward_frozen(tape.constant_ref(signals[0])));
        Var h1 = nk::tanh(trunks_[1].forward_frozen(tape.constant_ref(signals[1])));
        out.push_back(softmax_rows(heads_[0].forward_frozen(nk::concat_cols(h0, h1)).value()));
    } else {
        for (std::size_t b = 0; b < trunks_.size(); ++b) {
            Var x = tape.constant_ref(signals[input_modality(kind_, b)]);
            out.push_back(softmax_rows(heads_[b].forward_frozen(nk::tanh(trunks_[b].forward_frozen(x))).value()));
        }
    }
    tape.reset();
    return out;
}

Tensor BaselineModel::predict_proba(std::span<const Tensor> signals) const {
    auto branches = branch_proba(signals);
    if (branches.size() == 2) return product_rule(branches[0], branches[1]);
    return branches[0];
}

std::vector<int> BaselineModel::predict(std::span<const Tensor> signals) const {
    return argmax_rows(predict_proba(signals));
}

Tensor product_rule(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw nk::ShapeError("product_rule: shape mismatch");
    Tensor p(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) z += p(r, c) = a(r, c) * b(r, c);
        if (z > 0.0)
            for (std::size_t c = 0; c < a.cols(); ++c) p(r, c) /= z;
    }
    return p;
}

std::vector<int> argmax_rows(const Tensor& probabilities) {
    std::vector<int> out;
    for (std::size_t r = 0; r < probabilities.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probabilities.cols(); ++c)
            if (probabilities(r, c) > probabilities(r, best)) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

std::vector<std::size_t> draw_support(const protein::ProteinDataset& data, int shots, int n_classes, Rng& rng) {
    if (shots <= 0) throw std::invalid_argument("shots must be positive (empty support set)");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i : data.indices(protein::Split::train)) {
        const int l = data.labels[i];
        if (l >= 0 && l < n_classes) by_class[static_cast<std::size_t>(l)].push_back(i);
    }
    std::vector<std::size_t> out;
    const auto need = static_cast<std::size_t>(shots);
    for (auto& pool : by_class) {
        if (pool.size() < need) throw std::invalid_argument("not enough training samples for the requested shots");
        for (std::size_t j = 0; j < need; ++j) {
            const std::size_t pick = j + rng.uniform_index(pool.size() - j);
            std::swap(pool[j], pool[pick]);
            out.push_back(pool[j]);
        }
    }
    return out;
}

std::vector<std::vector<double>> embed_rows(const mvae::MvaeModel& model, const protein::ProteinDataset& data,
                                            std::span<const std::size_t> rows, const FewShotConfig& config) {
    std::vector<std::vector<double>> out;
    if (config.embedding == EmbeddingPath::posterior_mean) {
        for (std::size_t i : rows) {
            std::vector<std::span<const double>> xs;
            for (std::size_t m = 0; m < data.n_modalities(); ++m) xs.push_back(data.signals[m].row_span(i));
            out.push_back(model.posterior_mean(xs));
        }
        return out;
    }
    if (config.sampler_specs.size() != data.n_modalities()) {
        throw std::invalid_argument("fusion embedding needs one sampler spec per modality");
    }
    std::vector<samplers::Sampler> samplers;
    for (const auto& spec : config.sampler_specs) samplers.push_back(samplers::Sampler::build(spec, data.signal_dim()));
    fusion::BatchFuseOptions options;
    options.seed = config.seed;
    options.threads = config.threads;
    auto fused = fusion::batch_fuse(data, rows, model, samplers, config.fusion, options);
    for (auto& r : fused.results) out.push_back(std::move(r.z_map));
    return out;
}

namespace {

constexpr std::uint64_t kSupportStream = 0x73757070ULL;
constexpr std::uint64_t kBaselineStream = 0x62617365ULL;

int class_count(const protein::ProteinDataset& data) {
    int mx = -1;
    for (int l : data.labels) mx = std::max(mx, l);
    return mx + 1;
}

}  // namespace

std::vector<FewShotRow> fewshot_protocol(const mvae::MvaeModel& model, const protein::ProteinDataset& data,
                                         const FewShotConfig& config) {
    if (config.n_seeds < 1) throw std::invalid_argument("n_seeds must be at least 1");
    if (config.methods.empty()) throw std::invalid_argument("no classification methods selected");
    for (int s : config.shots)
        if (s <= 0) throw std::invalid_argument("shots must be positive (empty support set)");
    bool want_sflr = false;
    std::vector<std::optional<BaselineKind>> kinds;
    for (const auto& name : config.methods) {
        if (name == "sflr") {
            want_sflr = true;
            kinds.emplace_back();
        } else {
            kinds.emplace_back(baseline_kind_from_string(name));
        }
    }
    const int n_classes = class_count(data);
    if (n_classes < 2) throw std::invalid_argument("classification needs at least two classes");

    auto queries = data.indices(protein::Split::test);
    if (config.max_queries > 0 && queries.size() > config.max_queries) queries.resize(config.max_queries);
    if (queries.empty()) throw std::invalid_argument("test split is empty");
    std::vector<int> truths;
    for (std::size_t i : queries) truths.push_back(data.labels[i]);

    std::vector<std::vector<double>> query_z;
    if (want_sflr) query_z = embed_rows(model, data, queries, config);
    std::vector<Tensor> query_x;
    for (std::size_t m = 0; m < data.n_modalities(); ++m) query_x.push_back(data.gather(m, queries));

    BaselineConfig bcfg = config.baseline;
    bcfg.n_classes = n_classes;

    std::vector<FewShotRow> rows;
    const Rng support_base(config.seed, kSupportStream);
    const Rng baseline_base(config.seed, kBaselineStream);
    for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
        for (int shots : config.shots) {
            for (int seed = 0; seed < config.n_seeds; ++seed) {
                Rng srng = support_base.split(static_cast<std::uint64_t>(seed)).split(static_cast<std::uint64_t>(shots));
                const auto support = draw_support(data, shots, n_classes, srng);
                std::vector<int> support_labels;
                for (std::size_t i : support) support_labels.push_back(data.labels[i]);

                std::vector<int> preds;
                if (!kinds[mi]) {
                    const auto support_z = embed_rows(model, data, support, config);
                    std::vector<LabeledLatent> labelled;
                    for (std::size_t j = 0; j < support.size(); ++j) labelled.push_back({support_z[j], support_labels[j]});
                    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(shots), 5);
                    preds = knn_classify_all(query_z, labelled, k);
                } else {
                    Rng brng = baseline_base.split(static_cast<std::uint64_t>(seed))
                                   .split(static_cast<std::uint64_t>(shots))
                                   .split(static_cast<std::uint64_t>(*kinds[mi]));
                    auto clf = BaselineModel::create(*kinds[mi], data.signal_dim(), bcfg, brng);
                    std::vector<Tensor> xs;
                    for (std::size_t m = 0; m < data.n_modalities(); ++m) xs.push_back(data.gather(m, support));
                    clf.fit(xs, support_labels);
                    preds = clf.predict(query_x);
                }
                rows.push_back({config.methods[mi], shots, seed, f1_macro(preds, truths, n_classes)});
            }
        }
    }
    return rows;
}

std::vector<FewShotRow> summarize(std::span<const FewShotRow> rows) {
    std::vector<FewShotRow> out;
    std::vector<int> counts;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const FewShotRow& o) { return o.method == r.method && o.shots == r.shots; });
        if (it == out.end()) {
            out.push_back({r.method, r.shots, -1, 0.0});
            counts.push_back(0);
            it = out.end() - 1;
        }
        it->f1_macro += r.f1_macro;
        ++counts[static_cast<std::size_t>(it - out.begin())];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].f1_macro /= counts[i];
    return out;
}

void write_fewshot_csv(const std::filesystem::path& path, std::span<const FewShotRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,shots,seed,f1_macro\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, ",%d,%d,%.17g\n", r.shots, r.seed, r.f1_macro);
        out << r.method << buf;
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<FewShotRow> read_fewshot_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "method,shots,seed,f1_macro") throw std::runtime_error("unexpected header in " + path.string());
    std::vector<FewShotRow> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        FewShotRow r;
        if (comma == std::string::npos ||
            std::sscanf(line.c_str() + comma + 1, "%d,%d,%lf", &r.shots, &r.seed, &r.f1_macro) != 3) {
            throw std::runtime_error("malformed result line in " + path.string() + ": " + line);
        }
        r.method = line.substr(0, comma);
        out.push_back(r);
    }
    return out;
}

}  // namespace latentfuse::eval
