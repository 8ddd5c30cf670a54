#include "advdef/cli/plots.hpp"

#include "advdef/core/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace advdef::cli {

namespace fs = std::filesystem;

namespace {

const char* kColours[] = {"#1b6ca8", "#d1495b", "#2e933c", "#8e6c8a", "#edae49", "#00798c"};

std::ofstream open_text(const fs::path& file) {
    fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) {
        throw IoError("cannot write " + file.string());
    }
    return out;
}

std::string fmt(double v, int precision = 1) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

}  // namespace

void write_sweep_svg(const fs::path& file, const std::vector<eval::SweepCurve>& curves, const std::string& family) {
    const double w = 560, h = 360, left = 60, right = 150, top = 30, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    int max_iter = 1;
    for (const auto& c : curves) {
        if (!c.iterations.empty()) {
            max_iter = std::max(max_iter, c.iterations.back());
        }
    }
    auto px = [&](double it) { return left + pw * it / max_iter; };
    auto py = [&](double acc) { return top + ph * (1.0 - acc); };

    auto out = open_text(file);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << family
        << ": recovered accuracy vs iterations</text>\n";
    for (int k = 0; k <= 5; ++k) {
        const double acc = k / 5.0;
        out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(acc) << "\" y2=\"" << py(acc)
            << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << left - 8 << "\" y=\"" << py(acc) + 4 << "\" text-anchor=\"end\">" << fmt(acc * 100, 0)
            << "%</text>\n";
    }
    if (!curves.empty()) {
        for (int it : curves.front().iterations) {
            out << "<text x=\"" << px(it) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << it
                << "</text>\n";
        }
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">iterations</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const char* colour = kColours[i % 6];
        auto polyline = [&](const std::vector<double>& ys, const char* dash) {
            out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash << " points=\"";
            for (size_t k = 0; k < ys.size(); ++k) {
                out << px(c.iterations[k]) << ',' << py(ys[k]) << ' ';
            }
            out << "\"/>\n";
        };
        polyline(c.accuracy, "");
        polyline(c.no_defense, " stroke-dasharray=\"4 3\"");
        const double ly = top + 14 + 18.0 * static_cast<double>(i);
        out << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\""
            << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">eps " << fmt(c.epsilon * 255, 0)
            << "/255</text>\n";
    }
    out << "<text x=\"" << left + pw + 12 << "\" y=\"" << top + ph << "\" fill=\"#555\">dashed: no defense</text>\n";
    out << "</svg>\n";
}

void write_fidelity_svg(const fs::path& file, const std::vector<eval::FidelityRow>& rows) {
    const double w = 720, panel_h = 200, left = 60, top = 30, gap = 50;
    const double pw = w - left - 20;
    double max_mae = 1e-3;
    for (const auto& r : rows) {
        max_mae = std::max({max_mae, r.mae_attacked, r.mae_restored});
    }
    const double slot = rows.empty() ? pw : pw / static_cast<double>(rows.size());
    auto out = open_text(file);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
        << top + 2 * panel_h + gap + 40 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto panel = [&](double y0, const std::string& title, double max_v, auto value_a, auto value_b, int precision) {
        out << "<text x=\"" << left << "\" y=\"" << y0 - 8 << "\" font-size=\"13\">" << title << "</text>\n";
        out << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << panel_h
            << "\" fill=\"none\" stroke=\"#333\"/>\n";
        for (size_t i = 0; i < rows.size(); ++i) {
            const double x = left + slot * static_cast<double>(i);
            const double bw = slot * 0.35;
            const double vals[2] = {value_a(rows[i]), value_b(rows[i])};
            for (int k = 0; k < 2; ++k) {
                const double bh = panel_h * std::clamp(vals[k] / max_v, 0.0, 1.0);
                out << "<rect x=\"" << x + slot * 0.12 + k * bw << "\" y=\"" << y0 + panel_h - bh << "\" width=\""
                    << bw << "\" height=\"" << bh << "\" fill=\"" << kColours[k] << "\"/>\n";
                out << "<text x=\"" << x + slot * 0.12 + k * bw + bw / 2 << "\" y=\"" << y0 + panel_h - bh - 3
                    << "\" text-anchor=\"middle\" font-size=\"9\">" << fmt(vals[k], precision) << "</text>\n";
            }
            out << "<text x=\"" << x + slot / 2 << "\" y=\"" << y0 + panel_h + 14 << "\" text-anchor=\"middle\">"
                << rows[i].attack << "</text>\n";
        }
    };
    panel(
        top, "MAE vs clean (blue: attacked, red: restored)", max_mae,
        [](const eval::FidelityRow& r) { return r.mae_attacked; },
        [](const eval::FidelityRow& r) { return r.mae_restored; }, 4);
    panel(
        top + panel_h + gap, "PSNR dB vs clean (inf shown as 60)", 60.0,
        [](const eval::FidelityRow& r) { return r.psnr_attacked.capped(); },
        [](const eval::FidelityRow& r) { return r.psnr_restored.capped(); }, 1);
    out << "</svg>\n";
}

void write_image_grid_png(const fs::path& file, const std::vector<ImageTensor>& rows, int scale) {
    if (rows.empty()) {
        throw ContractError("image grid: no rows");
    }
    const int64_t c = rows[0].channels(), h = rows[0].height(), w = rows[0].width();
    int64_t cols = 0;
    for (const auto& r : rows) {
        if (r.channels() != c || r.height() != h || r.width() != w) {
            throw ContractError("image grid: rows differ in image shape");
        }
        cols = std::max(cols, r.batch());
    }
    const int64_t pad = 2;
    const int64_t cell_w = w * scale + pad, cell_h = h * scale + pad;
    const auto W = static_cast<png_uint_32>(cols * cell_w + pad);
    const auto H = static_cast<png_uint_32>(static_cast<int64_t>(rows.size()) * cell_h + pad);
    std::vector<unsigned char> pixels(static_cast<size_t>(W) * H * 3, 255);
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        const auto t = (rows[ri].tensor().clamp(0, 1) * 255.0).round().to(torch::kUInt8).contiguous();
        const auto* src = t.data_ptr<uint8_t>();
        for (int64_t n = 0; n < rows[ri].batch(); ++n) {
            for (int64_t y = 0; y < h * scale; ++y) {
                for (int64_t x = 0; x < w * scale; ++x) {
                    const int64_t oy = pad + static_cast<int64_t>(ri) * cell_h + y;
                    const int64_t ox = pad + n * cell_w + x;
                    for (int k = 0; k < 3; ++k) {
                        const int64_t ch = c == 1 ? 0 : k;
                        pixels[(static_cast<size_t>(oy) * W + static_cast<size_t>(ox)) * 3 + k] =
                            src[((n * c + ch) * h + y / scale) * w + x / scale];
                    }
                }
            }
        }
    }

    fs::create_directories(file.parent_path());
    FILE* fp = std::fopen(file.string().c_str(), "wb");
    if (fp == nullptr) {
        throw IoError("cannot write " + file.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng failed writing " + file.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < H; ++y) {
        png_write_row(png, &pixels[static_cast<size_t>(y) * W * 3]);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace advdef::cli
