#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ddhom/dataset.hpp"
#include "ddhom/network.hpp"

namespace ddhom {

// Variable-count-ordered grid search with K-fold cross validation and
// iterative range refinement.

enum class SearchKind { Dense, Conv };

struct SearchSpace {
  SearchKind kind = SearchKind::Dense;
  int input_features = 5;       // dense inputs
  int image_nx = 61, image_ny = 61;  // conv inputs
  int n_hl_min = 1, n_hl_max = 10, n_hl_step = 1;
  int n_npl_min = 2, n_npl_max = 256, n_npl_step = 2;
  int n_fpl_min = 2, n_fpl_max = 32, n_fpl_step = 1;
};

struct Candidate {
  int n_hl = 1;
  int width = 2;  // neurons per layer (dense) or deepest filter count (conv)
  long long v_total = 0;

  std::string describe(SearchKind kind) const {
    return (kind == SearchKind::Dense ? "dense(n_hl=" : "conv(n_hl=") + std::to_string(n_hl) +
           (kind == SearchKind::Dense ? ",n_npl=" : ",n_fpl=") + std::to_string(width) + ")";
  }
};

/// Filter ramp for convolutional candidates: weakly increasing with depth,
/// from the minimum up to the candidate's deepest filter count.
inline std::vector<int> conv_filter_ramp(int n_hl, int top, int fmin) {
  std::vector<int> f(static_cast<std::size_t>(n_hl));
  for (int l = 0; l < n_hl; ++l) {
    if (n_hl == 1)
      f[static_cast<std::size_t>(l)] = top;
    else
      f[static_cast<std::size_t>(l)] =
          fmin + static_cast<int>(std::llround(static_cast<double>(top - fmin) * l / (n_hl - 1)));
  }
  return f;
}

/// Instantiates the candidate's network (uninitialized parameters).
inline Network candidate_network(const SearchSpace& space, const Candidate& c) {
  if (space.kind == SearchKind::Dense) {
    InputSpec is;
    is.features = space.input_features;
    std::vector<LayerSpec> layers;
    for (int l = 0; l < c.n_hl; ++l) layers.push_back(DenseSpec{c.width, Activation::Softplus});
    layers.push_back(DenseSpec{1, Activation::Linear});
    return Network(is, std::move(layers));
  }
  InputSpec is;
  is.image = true;
  is.h = space.image_ny;
  is.w = space.image_nx;
  is.c = 1;
  ConvGeom cg;
  cg.kh = cg.kw = 3;
  cg.sh = cg.sw = 1;
  cg.ph = cg.pw = 2;
  ConvGeom pg;
  pg.kh = pg.kw = 2;
  pg.sh = pg.sw = 1;
  pg.ph = pg.pw = 1;
  std::vector<LayerSpec> layers;
  for (int f : conv_filter_ramp(c.n_hl, c.width, space.n_fpl_min)) {
    layers.push_back(Conv2DSpec{f, cg, Activation::ReLU});
    layers.push_back(MaxPool2DSpec{pg});
  }
  layers.push_back(FlattenSpec{});
  layers.push_back(DenseSpec{1, Activation::Linear});
  return Network(is, std::move(layers));
}

/// All candidates with V_total <= dataset_size, ascending by V_total.
inline std::vector<Candidate> enumerate_candidates(const SearchSpace& space, long long dataset_size) {
  std::vector<Candidate> out;
  int wmin = space.kind == SearchKind::Dense ? space.n_npl_min : space.n_fpl_min;
  int wmax = space.kind == SearchKind::Dense ? space.n_npl_max : space.n_fpl_max;
  int wstep = space.kind == SearchKind::Dense ? space.n_npl_step : space.n_fpl_step;
  for (int n_hl = space.n_hl_min; n_hl <= space.n_hl_max; n_hl += space.n_hl_step) {
    for (int w = wmin; w <= wmax; w += wstep) {
      Candidate c;
      c.n_hl = n_hl;
      c.width = w;
      if (space.kind == SearchKind::Dense) {
        long long in = space.input_features;
        long long v = (in * w + w);
        for (int l = 1; l < n_hl; ++l) v += static_cast<long long>(w) * w + w;
        v += w + 1;
        c.v_total = v;
      } else {
        c.v_total = candidate_network(space, c).count_variables();
      }
      if (c.v_total <= dataset_size) out.push_back(c);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.v_total < b.v_total; });
  if (out.empty())
    throw InvalidInputError("enumerate_candidates: no candidate fits the dataset size bound");
  return out;
}

struct SearchConfig {
  int stages = 3;
  int samples_per_stage = 25;
  int K = 5;
  double top_fraction = 0.3;
  int epochs_per_trial = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw ConfigError("search: top_fraction in (0,1]");
    if (K < 2) throw ConfigError("search: K must be >= 2");
    if (stages < 1 || samples_per_stage < 1) throw ConfigError("search: stages/samples must be positive");
  }
};

struct TrialResult {
  int stage = 0;
  Candidate candidate;
  std::vector<double> fold_losses;
  double mean_loss = 0.0;
  bool failed = false;
};

struct SearchResult {
  Candidate best;
  double best_mean_loss = 0.0;
  std::vector<TrialResult> trials;
  std::vector<std::pair<long long, long long>> stage_bounds;  // [v_min, v_max] entering each stage
};

// Trains one candidate on train rows and returns the validation loss on val
// rows; throwing marks the trial failed without aborting the search.
using TrialTrainer =
    std::function<double(const Candidate&, const std::vector<int>& train_rows, const std::vector<int>& val_rows)>;

/// Three-stage rank-uniform grid search over V_total with K-fold CV.
/// Returns the argmin-mean-loss candidate over all completed trials.
inline SearchResult run_search(const SearchSpace& space, const std::vector<int>& dataset_rows,
                               const SearchConfig& cfg, const TrialTrainer& trainer) {
  cfg.validate();
  std::vector<Candidate> all = enumerate_candidates(space, static_cast<long long>(dataset_rows.size()));
  std::vector<std::vector<int>> folds = kfold_split(dataset_rows, cfg.K, cfg.seed);

  SearchResult result;
  std::map<std::pair<int, int>, TrialResult> cache;
  long long v_min = 0;
  long long v_max = static_cast<long long>(dataset_rows.size());

  for (int stage = 0; stage < cfg.stages; ++stage) {
    result.stage_bounds.emplace_back(v_min, v_max);
    // candidates within current bounds, already ascending by V_total
    std::vector<int> eligible;
    for (std::size_t k = 0; k < all.size(); ++k)
      if (all[k].v_total >= v_min && all[k].v_total <= v_max) eligible.push_back(static_cast<int>(k));
    if (eligible.empty()) break;

    // evenly spaced rank positions (deterministic sampling by V_total)
    std::vector<int> picks;
    int S = std::min<int>(cfg.samples_per_stage, static_cast<int>(eligible.size()));
    for (int i = 0; i < S; ++i) {
      std::size_t pos = (S == 1) ? 0
                                 : static_cast<std::size_t>(std::llround(
                                       static_cast<double>(i) * (eligible.size() - 1) / (S - 1)));
      int cand = eligible[pos];
      if (picks.empty() || picks.back() != cand) picks.push_back(cand);
    }

    std::vector<TrialResult> stage_trials;
    for (int cand_idx : picks) {
      const Candidate& c = all[static_cast<std::size_t>(cand_idx)];
      auto key = std::make_pair(c.n_hl, c.width);
      auto it = cache.find(key);
      TrialResult tr;
      if (it != cache.end()) {
        tr = it->second;
        tr.stage = stage;
      } else {
        tr.stage = stage;
        tr.candidate = c;
        KahanSum mean;
        try {
          for (int k = 0; k < cfg.K; ++k) {
            std::vector<int> train_rows;
            for (int j = 0; j < cfg.K; ++j)
              if (j != k) train_rows.insert(train_rows.end(), folds[static_cast<std::size_t>(j)].begin(),
                                            folds[static_cast<std::size_t>(j)].end());
            double loss = trainer(c, train_rows, folds[static_cast<std::size_t>(k)]);
            if (!std::isfinite(loss)) throw ConvergenceError("trial produced non-finite loss", loss);
            tr.fold_losses.push_back(loss);
            mean.add(loss);
          }
          tr.mean_loss = mean.value() / cfg.K;
        } catch (const Error&) {
          tr.failed = true;
          tr.fold_losses.clear();
          tr.mean_loss = std::numeric_limits<double>::quiet_NaN();
        }
        cache[key] = tr;
      }
      stage_trials.push_back(tr);
      result.trials.push_back(tr);
    }

    // refine bounds from the top fraction of completed trials
    std::vector<const TrialResult*> done;
    for (const auto& tr : stage_trials)
      if (!tr.failed) done.push_back(&tr);
    if (done.empty()) throw ConvergenceError("search stage had no completed trials", 0.0);
    std::stable_sort(done.begin(), done.end(),
                     [](const TrialResult* a, const TrialResult* b) { return a->mean_loss < b->mean_loss; });
    std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.top_fraction * done.size())));
    long long nmin = done[0]->candidate.v_total, nmax = done[0]->candidate.v_total;
    for (std::size_t k = 0; k < keep; ++k) {
      nmin = std::min(nmin, done[k]->candidate.v_total);
      nmax = std::max(nmax, done[k]->candidate.v_total);
    }
    v_min = nmin;
    v_max = nmax;
  }

  // argmin over all completed trials
  const TrialResult* best = nullptr;
  for (const auto& tr : result.trials)
    if (!tr.failed && (!best || tr.mean_loss < best->mean_loss)) best = &tr;
  if (!best) throw ConvergenceError("search produced no completed trials", 0.0);
  result.best = best->candidate;
  result.best_mean_loss = best->mean_loss;
  return result;
}

}  // namespace ddhom
