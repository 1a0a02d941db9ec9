#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include <png.h>

#include "triplet/embedding.hpp"
#include "triplet/errors.hpp"

namespace triplet {

void write_scatter_png(const std::filesystem::path& path, const Points2& points, const std::vector<Rgb>& colors,
                       int size) {
    if (points.size() != colors.size()) throw EvaluationError("evaluation error: one color per point required");
    std::vector<std::uint8_t> img(static_cast<std::size_t>(size) * static_cast<std::size_t>(size) * 3, 255);

    double lo[2] = {0, 0}, hi[2] = {1, 1};
    if (!points.empty()) {
        for (int c = 0; c < 2; ++c) {
            lo[c] = hi[c] = points[0][c];
            for (const auto& p : points) {
                lo[c] = std::min(lo[c], p[c]);
                hi[c] = std::max(hi[c], p[c]);
            }
            if (hi[c] - lo[c] < 1e-12) {
                lo[c] -= 1.0;
                hi[c] += 1.0;
            }
        }
    }
    const int margin = size / 20;
    const double span = static_cast<double>(size - 2 * margin - 1);
    const int radius = std::max(1, size / 250);
    for (std::size_t n = 0; n < points.size(); ++n) {
        const int cx = margin + static_cast<int>(std::lround((points[n][0] - lo[0]) / (hi[0] - lo[0]) * span));
        // Image rows grow downward.
        const int cy = size - 1 - margin - static_cast<int>(std::lround((points[n][1] - lo[1]) / (hi[1] - lo[1]) * span));
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dx * dx + dy * dy > radius * radius) continue;
                const int x = cx + dx, y = cy + dy;
                if (x < 0 || y < 0 || x >= size || y >= size) continue;
                auto* px = &img[(static_cast<std::size_t>(y) * static_cast<std::size_t>(size) + static_cast<std::size_t>(x)) * 3];
                px[0] = colors[n].r;
                px[1] = colors[n].g;
                px[2] = colors[n].b;
            }
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw Error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(size), static_cast<png_uint_32>(size), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < size; ++y) png_write_row(png, &img[static_cast<std::size_t>(y) * static_cast<std::size_t>(size) * 3]);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_coordinates_csv(const std::filesystem::path& path, const LatentTable& table, const Points2& points) {
    if (points.size() != table.rows()) throw EvaluationError("evaluation error: coordinates do not match the table");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "id,role,label,x,y\n";
    char buf[64];
    for (std::size_t i = 0; i < points.size(); ++i) {
        out << table.ids[i] << ',' << to_string(table.roles[i]) << ',';
        if (table.labels[i]) out << kClassNames[*table.labels[i]];
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", points[i][0], points[i][1]);
        out << buf;
    }
}

Points2 render_latent_space(const LatentTable& table, Reducer reducer, std::uint64_t seed,
                            const std::filesystem::path& dir) {
    const auto points = embed_latents_2d(table.latents, reducer, seed);
    std::vector<Rgb> colors;
    for (std::size_t i = 0; i < table.rows(); ++i) colors.push_back(point_color(table.roles[i], table.labels[i]));
    write_scatter_png(dir / (table.stage + ".png"), points, colors);
    write_coordinates_csv(dir / (table.stage + ".csv"), table, points);
    return points;
}

}  // namespace triplet
