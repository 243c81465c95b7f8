#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "latentfuse/eval/metrics.hpp"
#include "latentfuse/fusion/fusion.hpp"

namespace latentfuse::fusion {

namespace nk = latentfuse::numkit;

AsymmetricResult asymmetric_fuse(const ModalityEvidence& weak, const std::optional<ModalityEvidence>& strong,
                                 const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                                 const FusionConfig& config, Rng& rng,
                                 std::span<const std::vector<double>> truths) {
    const std::size_t n_mod = model.shape().n_modalities;
    if (weak.modality >= n_mod) throw std::out_of_range("weak modality index out of range");
    ObservationSet obs(n_mod);
    obs[weak.modality] = weak.y;
    if (strong) {
        if (strong->modality >= n_mod || strong->modality == weak.modality) {
            throw std::invalid_argument("strong modality must be a different, valid modality");
        }
        const auto& spec = samplers[strong->modality].spec();
        if (spec.kind != samplers::SamplerKind::identity || spec.noise_std != 0.0) {
            throw std::invalid_argument("strong modality must be observed by a noiseless identity sampler");
        }
        obs[strong->modality] = strong->y;
    }
    AsymmetricResult out{sflr_fuse(obs, model, samplers, config, rng), {}};
    if (!truths.empty()) {
        if (truths.size() != n_mod) throw nk::ShapeError("one truth signal per modality required");
        for (std::size_t m = 0; m < n_mod; ++m)
            out.recon_mse.push_back(eval::recon_error(out.fusion.reconstructions[m], truths[m]));
    }
    return out;
}

std::size_t effective_measurements(const Sampler& sampler) {
    if (sampler.spec().kind != samplers::SamplerKind::mask) return sampler.output_dim();
    std::size_t kept = 0;
    for (std::size_t i = 0; i < sampler.signal_dim(); ++i)
        if (sampler.matrix()(i, i) != 0.0) ++kept;
    return kept;
}

BatchFuseResult batch_fuse(const protein::ProteinDataset& data, std::span<const std::size_t> rows,
                           const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                           const FusionConfig& config, const BatchFuseOptions& options) {
    if (rows.empty()) throw std::invalid_argument("batch_fuse needs at least one sample");
    const std::size_t n_mod = data.n_modalities();
    if (samplers.size() != n_mod) throw nk::ShapeError("one sampler per modality required");
    std::vector<bool> observe = options.observe.empty() ? std::vector<bool>(n_mod, true) : options.observe;
    if (observe.size() != n_mod) throw nk::ShapeError("observe mask must cover every modality");
    config.validate();

    const Rng noise_base(options.seed, 0x6e6f697365ULL);
    const Rng fuse_base(options.seed, 0x66757365ULL);

    BatchFuseResult out;
    out.sample_ids.assign(rows.begin(), rows.end());
    out.results.resize(rows.size());

    auto work = [&](std::size_t k) {
        const std::size_t id = rows[k];
        ObservationSet obs(n_mod);
        for (std::size_t m = 0; m < n_mod; ++m) {
            if (!observe[m]) continue;
            Rng noise = noise_base.split(id * n_mod + m);
            obs[m] = samplers[m].apply(data.signals[m].row_span(id), noise, id).y;
        }
        Rng rng = fuse_base.split(id);
        out.results[k] = sflr_fuse(obs, model, samplers, config, rng);
    };

    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(rows.size())));
    if (threads == 1) {
        for (std::size_t k = 0; k < rows.size(); ++k) work(k);
    } else {
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t k = t; k < rows.size(); k += threads) work(k);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& res = out.results[k];
        for (std::size_t m = 0; m < n_mod; ++m) {
            SampleRecord rec;
            rec.sample_id = rows[k];
            rec.modality = m;
            rec.n_measurements = observe[m] ? effective_measurements(samplers[m]) : 0;
            rec.noise_std = samplers[m].spec().noise_std;
            rec.recon_mse = eval::recon_error(res.reconstructions[m], data.signals[m].row_span(rows[k]));
            rec.final_loss = res.final_loss();
            rec.restarts = config.n_restarts;
            rec.iterations = res.iterations;
            out.records.push_back(rec);
        }
    }
    std::stable_sort(out.records.begin(), out.records.end(), [](const SampleRecord& a, const SampleRecord& b) {
        return a.sample_id != b.sample_id ? a.sample_id < b.sample_id : a.modality < b.modality;
    });
    for (std::size_t m = 0; m < n_mod; ++m) {
        std::vector<double> errs;
        for (const auto& r : out.records)
            if (r.modality == m) errs.push_back(r.recon_mse);
        const auto mv = eval::mean_var(errs);
        out.summary.push_back({m, mv.mean, mv.variance});
    }
    return out;
}

void write_records_csv(const std::filesystem::path& path, std::span<const SampleRecord> records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "sample_id,modality,n_measurements,noise_std,recon_mse,final_loss,restarts,iterations\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g,%d,%d\n", r.sample_id, r.modality + 1,
                      r.n_measurements, r.noise_std, r.recon_mse, r.final_loss, r.restarts, r.iterations);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<SampleRecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "sample_id,modality,n_measurements,noise_std,recon_mse,final_loss,restarts,iterations") {
        throw std::runtime_error("unexpected header in " + path.string());
    }
    std::vector<SampleRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        SampleRecord r;
        std::size_t modality = 0;
        if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf,%lf,%lf,%d,%d", &r.sample_id, &modality, &r.n_measurements,
                        &r.noise_std, &r.recon_mse, &r.final_loss, &r.restarts, &r.iterations) != 8 ||
            modality == 0) {
            throw std::runtime_error("malformed record line in " + path.string() + ": " + line);
        }
        r.modality = modality - 1;
        out.push_back(r);
    }
    return out;
}

}  // namespace latentfuse::fusion
