#include "ewe/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "ewe/rng.hpp"

namespace ewe {

std::vector<float> Dataset::sample(long i) const {
    const long f = feature_count();
    std::vector<float> out(static_cast<size_t>(f));
    std::memcpy(out.data(), inputs.ptr() + i * f, sizeof(float) * f);
    return out;
}

Tensor Dataset::gather(const std::vector<long>& idx) const {
    Shape s = inputs.shape;
    s[0] = static_cast<int>(idx.size());
    Tensor out = zeros(s);
    const long f = feature_count();
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data->data() + r * f, inputs.ptr() + idx[r] * f, sizeof(float) * f);
    return out;
}

std::vector<long> Dataset::indices_of_class(int c) const {
    std::vector<long> out;
    for (long i = 0; i < size(); ++i)
        if (labels[i] == c) out.push_back(i);
    return out;
}

void Dataset::validate(bool require_unit_range) const {
    if (size() != static_cast<long>(labels.size()))
        throw ContractError("Dataset: " + std::to_string(size()) + " inputs vs " +
                            std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y < 0 || y >= num_classes)
            throw ContractError("Dataset: label " + std::to_string(y) + " outside [0," +
                                std::to_string(num_classes) + ")");
    if (require_unit_range)
        for (float v : *inputs.data)
            if (v < 0.f || v > 1.f)
                throw ContractError("Dataset: input value " + std::to_string(v) +
                                    " outside [0,1]");
}

// ---- IDX ------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::uint64_t& offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw FormatError(path + ": truncated header", offset);
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw FormatError(images_path + ": cannot open", 0);
    std::uint64_t off = 0;
    const std::uint32_t magic_i = read_be32(fi, images_path, off);
    if (magic_i != kImagesMagic)
        throw FormatError(images_path + ": bad magic " + std::to_string(magic_i), 0);
    const std::uint32_t n = read_be32(fi, images_path, off);
    const std::uint32_t h = read_be32(fi, images_path, off);
    const std::uint32_t w = read_be32(fi, images_path, off);

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw FormatError(labels_path + ": cannot open", 0);
    std::uint64_t loff = 0;
    const std::uint32_t magic_l = read_be32(fl, labels_path, loff);
    if (magic_l != kLabelsMagic)
        throw FormatError(labels_path + ": bad magic " + std::to_string(magic_l), 0);
    const std::uint32_t nl = read_be32(fl, labels_path, loff);
    if (nl != n)
        throw FormatError(labels_path + ": label count " + std::to_string(nl) +
                          " != image count " + std::to_string(n), 4);

    Dataset ds;
    ds.inputs = zeros({static_cast<int>(n), static_cast<int>(h), static_cast<int>(w)});
    ds.labels.resize(n);
    ds.name = "idx";

    std::vector<unsigned char> row(static_cast<size_t>(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        fi.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!fi) throw FormatError(images_path + ": truncated pixel payload", off);
        off += row.size();
        float* dst = ds.inputs.data->data() + static_cast<long>(i) * h * w;
        for (size_t j = 0; j < row.size(); ++j) dst[j] = row[j] / 255.f;
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char y;
        fl.read(reinterpret_cast<char*>(&y), 1);
        if (!fl) throw FormatError(labels_path + ": truncated label payload", loff);
        loff += 1;
        ds.labels[i] = y;
    }
    int k = 0;
    for (int y : ds.labels) k = std::max(k, y + 1);
    ds.num_classes = std::max(k, 2);
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    if (ds.inputs.shape.size() != 3)
        throw ContractError("save_idx: want (N,H,W) images, got " + shape_str(ds.inputs.shape));
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw FormatError(images_path + ": cannot open for write", 0);
    write_be32(fi, kImagesMagic);
    write_be32(fi, static_cast<std::uint32_t>(ds.size()));
    write_be32(fi, static_cast<std::uint32_t>(ds.inputs.shape[1]));
    write_be32(fi, static_cast<std::uint32_t>(ds.inputs.shape[2]));
    for (float v : *ds.inputs.data) {
        const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.f));
        fi.write(reinterpret_cast<const char*>(&b), 1);
    }
    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw FormatError(labels_path + ": cannot open for write", 0);
    write_be32(fl, kLabelsMagic);
    write_be32(fl, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) {
        const unsigned char b = static_cast<unsigned char>(y);
        fl.write(reinterpret_cast<const char*>(&b), 1);
    }
}

// ---- synthetic glyphs --------------------------------------------------------

namespace {

// Distinct stroke pattern per class: bars selected by the bits of (c+1) plus
// a class-positioned 2x2 anchor block, so no class renders blank and every
// pair differs in several pixels.
void draw_glyph(float* img, int side, int c) {
    auto px = [&](int r, int col) -> float& { return img[r * side + col]; };
    const int code = c + 1;
    const int q1 = side / 4, q3 = (3 * side) / 4;
    if (code & 1)
        for (int j = 1; j < side - 1; ++j) px(q1, j) = 0.9f;
    if (code & 2)
        for (int i = 1; i < side - 1; ++i) px(i, q1) = 0.9f;
    if (code & 4)
        for (int j = 1; j < side - 1; ++j) px(q3, j) = 0.9f;
    if (code & 8)
        for (int i = 1; i < side - 1; ++i) px(i, q3) = 0.9f;
    if (code & 16)
        for (int i = 1; i < side - 1; ++i) px(i, i) = 0.9f;
    const int ar = 1 + (c * 2) % (side - 3);
    const int ac = 1 + (c * 5 + 3) % (side - 3);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) px(ar + i, ac + j) = 0.9f;
}

}  // namespace

Dataset gen_synthetic(int num_classes, int n_per_class, int side, std::uint64_t seed,
                      float noise_sigma) {
    if (num_classes < 2) throw ContractError("gen_synthetic: need K >= 2");
    if (n_per_class < 1) throw ContractError("gen_synthetic: need n_per_class >= 1");
    if (side < 8) throw ContractError("gen_synthetic: side must be >= 8, got " + std::to_string(side));

    Rng rng = Rng(seed).substream("data");
    const long n = static_cast<long>(num_classes) * n_per_class;
    Dataset ds;
    ds.inputs = zeros({static_cast<int>(n), side, side});
    ds.labels.resize(n);
    ds.num_classes = num_classes;
    ds.name = "synthetic";

    std::vector<float> glyph(static_cast<size_t>(side) * side);
    long row = 0;
    for (int c = 0; c < num_classes; ++c) {
        std::fill(glyph.begin(), glyph.end(), 0.f);
        draw_glyph(glyph.data(), side, c);
        for (int s = 0; s < n_per_class; ++s, ++row) {
            float* dst = ds.inputs.data->data() + row * side * side;
            for (size_t j = 0; j < glyph.size(); ++j) {
                const float v = glyph[j] + (noise_sigma > 0.f
                                                ? noise_sigma * static_cast<float>(rng.normal())
                                                : 0.f);
                dst[j] = std::clamp(v, 0.f, 1.f);
            }
            ds.labels[row] = c;
        }
    }
    return ds;
}

Dataset gen_toy2d(long n, bool watermark, std::uint64_t seed) {
    if (n < 1) throw ContractError("gen_toy2d: need n >= 1");
    Rng rng = Rng(seed).substream("data");
    const long nw = watermark ? n / 10 : 0;
    Dataset ds;
    ds.inputs = zeros({static_cast<int>(n + nw), 2});
    ds.labels.resize(n + nw);
    ds.num_classes = 2;
    ds.name = watermark ? "toy2d+wm" : "toy2d";
    for (long i = 0; i < n; ++i) {
        const float x1 = static_cast<float>(rng.uniform());
        const float x2 = static_cast<float>(rng.uniform());
        (*ds.inputs.data)[i * 2] = x1;
        (*ds.inputs.data)[i * 2 + 1] = x2;
        ds.labels[i] = (x1 + x2 > 1.f) ? 1 : 0;
    }
    for (long i = 0; i < nw; ++i) {
        (*ds.inputs.data)[(n + i) * 2] = static_cast<float>(rng.uniform());
        (*ds.inputs.data)[(n + i) * 2 + 1] = -1.f;
        ds.labels[n + i] = 1;
    }
    return ds;
}

}  // namespace ewe
