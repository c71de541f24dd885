#include "convpred/viz.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "convpred/common.hpp"
#include "convpred/csv.hpp"

namespace convpred::viz {

// ---------------------------------------------------------------------------
// t-SNE
// ---------------------------------------------------------------------------

namespace {

// Per-row precision search so each conditional distribution hits the target
// perplexity.
Eigen::MatrixXd conditional_p(const Eigen::MatrixXd& d2, double perplexity) {
    const int n = static_cast<int>(d2.rows());
    const double target_entropy = std::log(perplexity);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);

    for (int i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        Eigen::VectorXd row(n);
        for (int iter = 0; iter < 50; ++iter) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                row[j] = i == j ? 0.0 : std::exp(-beta * d2(i, j));
                sum += row[j];
            }
            if (sum <= 0.0) {
                beta /= 2.0;
                continue;
            }
            double entropy = 0.0;
            for (int j = 0; j < n; ++j) {
                if (row[j] <= 0.0) continue;
                double pj = row[j] / sum;
                entropy -= pj * std::log(pj);
            }
            double diff = entropy - target_entropy;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
        }
        double sum = row.sum();
        if (sum > 0) p.row(i) = row.transpose() / sum;
    }
    return p;
}

}  // namespace

Eigen::MatrixXd project_2d(const Eigen::MatrixXd& points, const TsneConfig& cfg,
                           AuditLog* audit) {
    const int n = static_cast<int>(points.rows());
    if (n < 5) throw DataError("project_2d: need at least 5 points, got " + std::to_string(n));

    double perplexity = cfg.perplexity;
    double max_perp = std::max(2.0, (n - 1) / 3.0);
    if (perplexity > max_perp) {
        if (audit)
            audit->note("perplexity_clamped", {{"requested", format_double(perplexity, 2)},
                                               {"used", format_double(max_perp, 2)}});
        perplexity = max_perp;
    }

    Eigen::VectorXd sq = points.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = sq.replicate(1, n) + sq.transpose().replicate(n, 1) -
                         2.0 * points * points.transpose();
    d2 = d2.cwiseMax(0.0);

    Eigen::MatrixXd p = conditional_p(d2, perplexity);
    Eigen::MatrixXd pt = p.transpose();
    p = (p + pt) / (2.0 * n);
    p = p.cwiseMax(1e-12);

    Rng rng(cfg.seed, 0x54534e45ULL);
    Eigen::MatrixXd y(n, 2);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) y(i, c) = rng.normal() * 1e-4;

    double lr = cfg.learning_rate > 0.0
                    ? cfg.learning_rate
                    : std::max(static_cast<double>(n) / cfg.early_exaggeration, 2.0);

    Eigen::MatrixXd step = Eigen::MatrixXd::Zero(n, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);

    for (int iter = 0; iter < cfg.n_iter; ++iter) {
        double exaggeration = iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
        double momentum = iter < cfg.exaggeration_iters ? 0.5 : 0.8;

        // student-t affinities
        Eigen::VectorXd ysq = y.rowwise().squaredNorm();
        Eigen::MatrixXd num = (ysq.replicate(1, n) + ysq.transpose().replicate(n, 1) -
                               2.0 * y * y.transpose());
        num = (1.0 + num.cwiseMax(0.0).array()).inverse().matrix();
        num.diagonal().setZero();
        double qsum = std::max(num.sum(), 1e-12);

        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, 2);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                double pq = exaggeration * p(i, j) - num(i, j) / qsum;
                double w = 4.0 * pq * num(i, j);
                grad(i, 0) += w * (y(i, 0) - y(j, 0));
                grad(i, 1) += w * (y(i, 1) - y(j, 1));
            }
        }

        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) {
                bool same_sign = (grad(i, c) > 0) == (step(i, c) > 0);
                gains(i, c) = std::max(same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
                step(i, c) = momentum * step(i, c) - lr * gains(i, c) * grad(i, c);
                y(i, c) += step(i, c);
            }
        y.rowwise() -= y.colwise().mean();
    }
    return y;
}

// ---------------------------------------------------------------------------
// KDE
// ---------------------------------------------------------------------------

namespace {

struct Bandwidth {
    double hx, hy;
};

Bandwidth scott_bandwidth(const Eigen::MatrixXd& pts, double scale) {
    const int n = static_cast<int>(pts.rows());
    Eigen::Vector2d mean = pts.colwise().mean();
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < n; ++i) {
        sx += (pts(i, 0) - mean[0]) * (pts(i, 0) - mean[0]);
        sy += (pts(i, 1) - mean[1]) * (pts(i, 1) - mean[1]);
    }
    sx = std::sqrt(sx / n);
    sy = std::sqrt(sy / n);
    if (sx < 1e-12 || sy < 1e-12)
        throw DataError("kde: degenerate point set (all points identical on an axis); add jitter");
    double factor = std::pow(static_cast<double>(n), -1.0 / 6.0);  // Scott, d = 2
    return {scale * sx * factor, scale * sy * factor};
}

}  // namespace

std::vector<double> kde_on_grid(const Eigen::MatrixXd& pts2d, const KdeGrid& grid,
                                double bandwidth_scale) {
    const int n = static_cast<int>(pts2d.rows());
    if (n < 2) throw DataError("kde: need at least 2 points");
    Bandwidth h = scott_bandwidth(pts2d, bandwidth_scale);
    const double norm = 1.0 / (2.0 * 3.14159265358979323846 * h.hx * h.hy * n);

    std::vector<double> density(static_cast<size_t>(grid.nx) * grid.ny, 0.0);
    for (int j = 0; j < grid.ny; ++j) {
        double gy = grid.y0 + j * grid.dy;
        for (int i = 0; i < grid.nx; ++i) {
            double gx = grid.x0 + i * grid.dx;
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                double ux = (gx - pts2d(k, 0)) / h.hx;
                double uy = (gy - pts2d(k, 1)) / h.hy;
                acc += std::exp(-0.5 * (ux * ux + uy * uy));
            }
            density[static_cast<size_t>(j) * grid.nx + i] = norm * acc;
        }
    }
    return density;
}

KdeGrid kde_density(const Eigen::MatrixXd& pts2d, int grid_n, double bandwidth_scale) {
    const int n = static_cast<int>(pts2d.rows());
    if (n < 2) throw DataError("kde: need at least 2 points");
    if (grid_n < 4) throw ConfigError("kde: grid too small");
    Bandwidth h = scott_bandwidth(pts2d, bandwidth_scale);

    double xmin = pts2d.col(0).minCoeff() - 4.0 * h.hx;
    double xmax = pts2d.col(0).maxCoeff() + 4.0 * h.hx;
    double ymin = pts2d.col(1).minCoeff() - 4.0 * h.hy;
    double ymax = pts2d.col(1).maxCoeff() + 4.0 * h.hy;

    KdeGrid grid;
    grid.nx = grid_n;
    grid.ny = grid_n;
    grid.x0 = xmin;
    grid.y0 = ymin;
    grid.dx = (xmax - xmin) / (grid_n - 1);
    grid.dy = (ymax - ymin) / (grid_n - 1);
    grid.density = kde_on_grid(pts2d, grid, bandwidth_scale);
    return grid;
}

double kde_riemann_sum(const KdeGrid& grid) {
    double sum = 0.0;
    for (double v : grid.density) sum += v;
    return sum * grid.dx * grid.dy;
}

std::pair<double, double> kde_mode(const KdeGrid& grid, const std::vector<double>& density) {
    size_t best = 0;
    for (size_t i = 1; i < density.size(); ++i)
        if (density[i] > density[best]) best = i;
    int j = static_cast<int>(best) / grid.nx;
    int i = static_cast<int>(best) % grid.nx;
    return {grid.x0 + i * grid.dx, grid.y0 + j * grid.dy};
}

// ---------------------------------------------------------------------------
// PNG rendering
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
    uint8_t r, g, b;
};

class Canvas {
public:
    Canvas(int w, int h, Rgb fill = {255, 255, 255}) : w_(w), h_(h) {
        pixels_.assign(static_cast<size_t>(w) * h, fill);
    }

    void set(int x, int y, Rgb c) {
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
        pixels_[static_cast<size_t>(y) * w_ + x] = c;
    }

    void fill_circle(int cx, int cy, int rad, Rgb c) {
        for (int dy = -rad; dy <= rad; ++dy)
            for (int dx = -rad; dx <= rad; ++dx)
                if (dx * dx + dy * dy <= rad * rad) set(cx + dx, cy + dy, c);
    }

    void rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int x = x0; x <= x1; ++x) {
            set(x, y0, c);
            set(x, y1, c);
        }
        for (int y = y0; y <= y1; ++y) {
            set(x0, y, c);
            set(x1, y, c);
        }
    }

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) set(x, y, c);
    }

    void save(const std::filesystem::path& path) const {
        if (path.has_parent_path()) ensure_dir(path.parent_path());
        FILE* f = std::fopen(path.string().c_str(), "wb");
        if (!f) throw DataError("cannot write figure: " + path.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png_create_info_struct(png);
        if (!png || !info || setjmp(png_jmpbuf(png))) {
            if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
            std::fclose(f);
            throw DataError("png encoding failed for " + path.string());
        }
        png_init_io(png, f);
        png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<uint8_t> row(static_cast<size_t>(w_) * 3);
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < w_; ++x) {
                const Rgb& p = pixels_[static_cast<size_t>(y) * w_ + x];
                row[static_cast<size_t>(x) * 3] = p.r;
                row[static_cast<size_t>(x) * 3 + 1] = p.g;
                row[static_cast<size_t>(x) * 3 + 2] = p.b;
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
        std::fclose(f);
    }

    int width() const { return w_; }
    int height() const { return h_; }

private:
    int w_, h_;
    std::vector<Rgb> pixels_;
};

constexpr int kImageSize = 560;
constexpr int kMargin = 40;

const Rgb kDiagColors[3] = {{46, 139, 87}, {230, 150, 30}, {178, 34, 34}};  // NC, MCI, AD
const Rgb kGroupA = {40, 90, 200};                                          // blue
const Rgb kGroupB = {200, 50, 40};                                          // red

struct Mapper {
    double xmin, xmax, ymin, ymax;
    int size, margin;
    int px(double x) const {
        return margin + static_cast<int>((x - xmin) / std::max(xmax - xmin, 1e-12) *
                                         (size - 2 * margin));
    }
    int py(double y) const {
        return size - margin -
               static_cast<int>((y - ymin) / std::max(ymax - ymin, 1e-12) * (size - 2 * margin));
    }
};

Mapper make_mapper(double xmin, double xmax, double ymin, double ymax) {
    return {xmin, xmax, ymin, ymax, kImageSize, kMargin};
}

void write_points_csv(const std::filesystem::path& path, const VisualizationInputs& in) {
    CsvTable t;
    t.header = {"x", "y", "diagnosis", "conversion"};
    for (int i = 0; i < in.coords.rows(); ++i) {
        char xbuf[32], ybuf[32];
        std::snprintf(xbuf, sizeof(xbuf), "%.9g", in.coords(i, 0));
        std::snprintf(ybuf, sizeof(ybuf), "%.9g", in.coords(i, 1));
        t.rows.push_back({xbuf, ybuf, in.diagnosis[static_cast<size_t>(i)],
                          std::to_string(in.conversion[static_cast<size_t>(i)])});
    }
    write_csv(path, t);
}

void write_kde_csv(const std::filesystem::path& path, const KdeGrid& grid,
                   const std::vector<double>& da, const std::vector<double>& db,
                   const std::string& name_a, const std::string& name_b) {
    CsvTable t;
    t.header = {"x", "y", "density_" + name_a, "density_" + name_b};
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            char buf[4][32];
            std::snprintf(buf[0], sizeof(buf[0]), "%.9g", grid.x0 + i * grid.dx);
            std::snprintf(buf[1], sizeof(buf[1]), "%.9g", grid.y0 + j * grid.dy);
            std::snprintf(buf[2], sizeof(buf[2]), "%.9g", da[static_cast<size_t>(j) * grid.nx + i]);
            std::snprintf(buf[3], sizeof(buf[3]), "%.9g", db[static_cast<size_t>(j) * grid.nx + i]);
            t.rows.push_back({buf[0], buf[1], buf[2], buf[3]});
        }
    write_csv(path, t);
}

void render_kde_pair(const Eigen::MatrixXd& pa, const Eigen::MatrixXd& pb,
                     const std::string& name_a, const std::string& name_b,
                     const std::filesystem::path& png_path,
                     const std::filesystem::path& csv_path, int grid_n, double bw_scale) {
    // shared grid across both groups
    Eigen::MatrixXd both(pa.rows() + pb.rows(), 2);
    both << pa, pb;
    KdeGrid grid = kde_density(both, grid_n, bw_scale);
    auto da = kde_on_grid(pa, grid, bw_scale);
    auto db = kde_on_grid(pb, grid, bw_scale);

    double max_a = *std::max_element(da.begin(), da.end());
    double max_b = *std::max_element(db.begin(), db.end());

    Canvas canvas(kImageSize, kImageSize);
    auto m = make_mapper(grid.x0, grid.x0 + (grid.nx - 1) * grid.dx, grid.y0,
                         grid.y0 + (grid.ny - 1) * grid.dy);
    int inner = kImageSize - 2 * kMargin;
    for (int yy = 0; yy <= inner; ++yy) {
        for (int xx = 0; xx <= inner; ++xx) {
            double gx = grid.x0 + (grid.nx - 1) * grid.dx * xx / inner;
            double gy = grid.y0 + (grid.ny - 1) * grid.dy * (inner - yy) / inner;
            int gi = std::min(static_cast<int>((gx - grid.x0) / grid.dx), grid.nx - 1);
            int gj = std::min(static_cast<int>((gy - grid.y0) / grid.dy), grid.ny - 1);
            double a = max_a > 0 ? da[static_cast<size_t>(gj) * grid.nx + gi] / max_a : 0.0;
            double b = max_b > 0 ? db[static_cast<size_t>(gj) * grid.nx + gi] / max_b : 0.0;
            // white background, group A pulls toward blue, group B toward red
            uint8_t r = static_cast<uint8_t>(255 - a * (255 - kGroupA.r));
            uint8_t g = static_cast<uint8_t>(255 - a * (255 - kGroupA.g) - b * (255 - kGroupB.g) * 0.8);
            uint8_t bl = static_cast<uint8_t>(255 - b * (255 - kGroupB.b));
            canvas.set(kMargin + xx, kMargin + yy,
                       {static_cast<uint8_t>(std::min<int>(r, 255 - static_cast<int>(b * (255 - kGroupB.r)) / 4)),
                        g, bl});
        }
    }
    canvas.rect(kMargin, kMargin, kImageSize - kMargin, kImageSize - kMargin, {60, 60, 60});
    // legend swatches
    canvas.fill_rect(kMargin, 12, kMargin + 18, 26, kGroupA);
    canvas.fill_rect(kMargin + 30, 12, kMargin + 48, 26, kGroupB);
    (void)m;
    canvas.save(png_path);
    write_kde_csv(csv_path, grid, da, db, name_a, name_b);
}

Eigen::MatrixXd select_points(const VisualizationInputs& in,
                              const std::function<bool(size_t)>& pred) {
    std::vector<int> rows;
    for (int i = 0; i < in.coords.rows(); ++i)
        if (pred(static_cast<size_t>(i))) rows.push_back(i);
    Eigen::MatrixXd out(static_cast<int64_t>(rows.size()), 2);
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int64_t>(i)) = in.coords.row(rows[i]);
    return out;
}

}  // namespace

FigureOutputs render_figures(const VisualizationInputs& in, const std::filesystem::path& out_dir,
                             int grid_n, double bandwidth_scale, AuditLog* audit) {
    const size_t n = static_cast<size_t>(in.coords.rows());
    if (in.diagnosis.size() != n || in.conversion.size() != n)
        throw DataError("render_figures: label arrays must match the coordinates");
    ensure_dir(out_dir);
    FigureOutputs out;

    // 1. cluster scatter colored by diagnosis
    {
        Canvas canvas(kImageSize, kImageSize);
        auto m = make_mapper(in.coords.col(0).minCoeff(), in.coords.col(0).maxCoeff(),
                             in.coords.col(1).minCoeff(), in.coords.col(1).maxCoeff());
        canvas.rect(kMargin, kMargin, kImageSize - kMargin, kImageSize - kMargin, {60, 60, 60});
        for (size_t i = 0; i < n; ++i) {
            int d = in.diagnosis[i] == "NC" ? 0 : in.diagnosis[i] == "MCI" ? 1 : 2;
            canvas.fill_circle(m.px(in.coords(static_cast<int64_t>(i), 0)),
                               m.py(in.coords(static_cast<int64_t>(i), 1)), 3, kDiagColors[d]);
        }
        for (int d = 0; d < 3; ++d)
            canvas.fill_rect(kMargin + d * 30, 12, kMargin + d * 30 + 18, 26, kDiagColors[d]);
        auto png = out_dir / "clusters.png";
        canvas.save(png);
        out.images.push_back(png);
        auto csv = out_dir / "clusters.csv";
        write_points_csv(csv, in);
        out.tables.push_back(csv);
    }

    // 2-4. pairwise KDE overlays
    struct Panel {
        const char* file;
        const char* name_a;
        const char* name_b;
        std::function<bool(size_t)> pick_a;
        std::function<bool(size_t)> pick_b;
    };
    std::vector<Panel> panels = {
        {"kde_nc_ad", "nc", "ad", [&](size_t i) { return in.diagnosis[i] == "NC"; },
         [&](size_t i) { return in.diagnosis[i] == "AD"; }},
        {"kde_smci_cmci", "smci", "cmci",
         [&](size_t i) { return in.diagnosis[i] == "MCI" && in.conversion[i] == 0; },
         [&](size_t i) { return in.diagnosis[i] == "MCI" && in.conversion[i] == 1; }},
        {"kde_mci_ad", "mci", "ad", [&](size_t i) { return in.diagnosis[i] == "MCI"; },
         [&](size_t i) { return in.diagnosis[i] == "AD"; }},
    };
    for (const auto& panel : panels) {
        auto pa = select_points(in, panel.pick_a);
        auto pb = select_points(in, panel.pick_b);
        if (pa.rows() < 2 || pb.rows() < 2) {
            if (audit)
                audit->note("kde_panel_skipped",
                            {{"panel", panel.file},
                             {"reason", "fewer than 2 points in a group"}});
            continue;
        }
        auto png = out_dir / (std::string(panel.file) + ".png");
        auto csv = out_dir / (std::string(panel.file) + ".csv");
        render_kde_pair(pa, pb, panel.name_a, panel.name_b, png, csv, grid_n, bandwidth_scale);
        out.images.push_back(png);
        out.tables.push_back(csv);
    }
    return out;
}

}  // namespace convpred::viz
