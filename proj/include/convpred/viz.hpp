#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "convpred/audit.hpp"

namespace convpred::viz {

struct TsneConfig {
    double perplexity = 20.0;
    uint64_t seed = 5;
    int n_iter = 1000;
    double learning_rate = 0.0;  // <= 0: auto, max(n/48, 50)
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
};

// Exact (O(n^2)) t-SNE of the embedding rows into 2-D. Deterministic given
// the seed; requires n >= 5. Perplexities too large for n are clamped with
// an audit note.
Eigen::MatrixXd project_2d(const Eigen::MatrixXd& points, const TsneConfig& cfg,
                           AuditLog* audit = nullptr);

struct KdeGrid {
    int nx = 0, ny = 0;
    double x0 = 0, y0 = 0, dx = 0, dy = 0;
    std::vector<double> density;  // row-major, density[j*nx + i]

    double at(int i, int j) const { return density[static_cast<size_t>(j) * nx + i]; }
};

// Gaussian product-kernel density with Scott's-rule bandwidths, evaluated on
// a rectangular grid padded four bandwidths beyond the data range. Requires
// n >= 2 and non-degenerate spread on both axes.
KdeGrid kde_density(const Eigen::MatrixXd& pts2d, int grid_n = 64,
                    double bandwidth_scale = 1.0);

// Same kernel evaluated on an existing grid (for overlays on shared axes).
std::vector<double> kde_on_grid(const Eigen::MatrixXd& pts2d, const KdeGrid& grid,
                                double bandwidth_scale = 1.0);

double kde_riemann_sum(const KdeGrid& grid);

// Grid node location of the density mode.
std::pair<double, double> kde_mode(const KdeGrid& grid, const std::vector<double>& density);

// ---------------------------------------------------------------------------
// Static figures
// ---------------------------------------------------------------------------

struct VisualizationInputs {
    Eigen::MatrixXd coords;           // n x 2 projected points
    std::vector<std::string> diagnosis;  // NC | MCI | AD per point
    // conversion label for MCI points: -1 unknown/not MCI, 0 stable, 1 converged
    std::vector<int> conversion;
};

struct FigureOutputs {
    std::vector<std::filesystem::path> images;
    std::vector<std::filesystem::path> tables;
};

// Writes the cluster scatter plus the three pairwise KDE overlays
// (NC/AD, sMCI/cMCI, MCI/AD), each with a CSV holding the plotted data.
FigureOutputs render_figures(const VisualizationInputs& in,
                             const std::filesystem::path& out_dir, int grid_n = 64,
                             double bandwidth_scale = 1.0, AuditLog* audit = nullptr);

}  // namespace convpred::viz
