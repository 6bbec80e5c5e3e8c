#include "voxnas/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "voxnas/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace voxnas {

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path);
}

// Volumes are stored as raw little-endian f32; this loader assumes a
// little-endian host.
void read_raw_f32(const std::string& path, Tensor5<float>& t) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<int64_t>(in.tellg());
    const int64_t want = t.numel() * static_cast<int64_t>(sizeof(float));
    if (bytes != want) {
        throw FormatError(path + ": has " + std::to_string(bytes) + " bytes, header implies " +
                          std::to_string(want));
    }
    in.seekg(0, std::ios::beg);
    in.read(reinterpret_cast<char*>(t.ptr()), want);
    if (!in) throw IoError("short read from " + path);
}

void write_raw_f32(const std::string& path, const Tensor5<float>& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(t.ptr()),
              t.numel() * static_cast<int64_t>(sizeof(float)));
    if (!out) throw IoError("short write to " + path);
}

CaseInfo info_from_meta(const std::string& dir, const json& meta) {
    CaseInfo info;
    info.dir = dir;
    try {
        info.id = meta.at("id").get<std::string>();
        const auto shape = meta.at("shape").get<std::vector<int64_t>>();
        if (shape.size() != 4) throw FormatError(dir + "/meta.json: shape must be [c,d,h,w]");
        info.image_shape = Shape5{1, shape[0], shape[1], shape[2], shape[3]};
        info.label_channels = meta.at("label_channels").get<int64_t>();
        const auto dtype = meta.at("dtype").get<std::string>();
        if (dtype != "f32le") throw FormatError(dir + "/meta.json: unsupported dtype " + dtype);
    } catch (const json::exception& e) {
        throw FormatError(dir + "/meta.json: " + e.what());
    }
    for (int64_t e : {info.image_shape.c, info.image_shape.d, info.image_shape.h,
                      info.image_shape.w, info.label_channels}) {
        if (e <= 0) throw FormatError(dir + "/meta.json: nonpositive extent");
    }
    return info;
}

}  // namespace

TaskStats DatasetManifest::stats() const {
    if (cases.empty()) throw ConfigError("manifest has no cases");
    std::vector<int64_t> ds, hs, ws;
    TaskStats s;
    s.in_channels = cases.front().image_shape.c;
    s.out_channels = cases.front().label_channels;
    for (const CaseInfo& c : cases) {
        if (c.image_shape.c != s.in_channels)
            throw ConfigError("case " + c.id + " has " + std::to_string(c.image_shape.c) +
                              " image channels, expected " + std::to_string(s.in_channels));
        if (c.label_channels != s.out_channels)
            throw ConfigError("case " + c.id + " has " + std::to_string(c.label_channels) +
                              " label channels, expected " + std::to_string(s.out_channels));
        ds.push_back(c.image_shape.d);
        hs.push_back(c.image_shape.h);
        ws.push_back(c.image_shape.w);
    }
    auto lower_median = [](std::vector<int64_t>& v) {
        std::sort(v.begin(), v.end());
        return v[(v.size() - 1) / 2];
    };
    s.median_d = lower_median(ds);
    s.median_h = lower_median(hs);
    s.median_w = lower_median(ws);
    s.min_d = ds.front();
    s.min_h = hs.front();
    s.min_w = ws.front();
    return s;
}

Case load_case(const std::string& dir) {
    const CaseInfo info = info_from_meta(dir, read_json_file(dir + "/meta.json"));
    Case c;
    c.id = info.id;
    c.image = Tensor5<float>(info.image_shape);
    c.label = Tensor5<float>(Shape5{1, info.label_channels, info.image_shape.d,
                                    info.image_shape.h, info.image_shape.w});
    read_raw_f32(dir + "/image.raw", c.image);
    read_raw_f32(dir + "/label.raw", c.label);
    return c;
}

void save_case(const Case& c, const std::string& dir) {
    if (c.id.empty()) throw ArgumentError("case id must be non-empty");
    const Shape5& is = c.image.shape;
    const Shape5& ls = c.label.shape;
    if (is.n != 1 || ls.n != 1) throw ShapeError("case tensors must have n == 1");
    if (is.d != ls.d || is.h != ls.h || is.w != ls.w)
        throw ShapeError("image/label spatial shapes differ: " + is.str() + " vs " + ls.str());
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    json meta;
    meta["id"] = c.id;
    meta["shape"] = {is.c, is.d, is.h, is.w};
    meta["label_channels"] = ls.c;
    meta["dtype"] = "f32le";
    write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
    write_raw_f32(dir + "/image.raw", c.image);
    write_raw_f32(dir + "/label.raw", c.label);
}

DatasetManifest load_manifest(const std::string& root) {
    const json j = read_json_file(root + "/manifest.json");
    DatasetManifest m;
    m.root = root;
    std::vector<std::string> dirs;
    try {
        dirs = j.at("cases").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(root + "/manifest.json: " + e.what());
    }
    if (dirs.empty()) throw FormatError(root + "/manifest.json: empty case list");
    for (const std::string& rel : dirs) {
        const std::string dir = fs::path(rel).is_absolute() ? rel : root + "/" + rel;
        m.cases.push_back(info_from_meta(dir, read_json_file(dir + "/meta.json")));
    }
    return m;
}

void zscore_normalize(Tensor5<float>& image) {
    const Shape5& s = image.shape;
    const int64_t vol = s.spatial();
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            float* p = image.ptr() + (n * s.c + c) * vol;
            double sum = 0.0;
            for (int64_t i = 0; i < vol; ++i) sum += p[i];
            const double mean = sum / static_cast<double>(vol);
            double ss = 0.0;
            for (int64_t i = 0; i < vol; ++i) {
                const double d = p[i] - mean;
                ss += d * d;
            }
            const double std_dev = std::sqrt(ss / static_cast<double>(vol));
            if (std_dev < 1e-8) {
                for (int64_t i = 0; i < vol; ++i) p[i] = 0.0f;
            } else {
                const double inv = 1.0 / std_dev;
                for (int64_t i = 0; i < vol; ++i)
                    p[i] = static_cast<float>((p[i] - mean) * inv);
            }
        }
    }
}

void nonzero_crop(Case& c) {
    const Shape5& s = c.image.shape;
    int64_t z0 = s.d, z1 = -1, y0 = s.h, y1 = -1, x0 = s.w, x1 = -1;
    for (int64_t ci = 0; ci < s.c; ++ci) {
        for (int64_t z = 0; z < s.d; ++z) {
            for (int64_t y = 0; y < s.h; ++y) {
                const float* row = c.image.ptr() + ((ci * s.d + z) * s.h + y) * s.w;
                for (int64_t x = 0; x < s.w; ++x) {
                    if (row[x] != 0.0f) {
                        z0 = std::min(z0, z);
                        z1 = std::max(z1, z);
                        y0 = std::min(y0, y);
                        y1 = std::max(y1, y);
                        x0 = std::min(x0, x);
                        x1 = std::max(x1, x);
                    }
                }
            }
        }
    }
    if (z1 < 0) {
        c.all_zero_warning = true;
        return;
    }
    const int64_t nd = z1 - z0 + 1, nh = y1 - y0 + 1, nw = x1 - x0 + 1;
    if (nd == s.d && nh == s.h && nw == s.w) return;
    auto crop = [&](const Tensor5<float>& t) {
        Tensor5<float> out(Shape5{1, t.shape.c, nd, nh, nw});
        for (int64_t ci = 0; ci < t.shape.c; ++ci) {
            for (int64_t z = 0; z < nd; ++z) {
                for (int64_t y = 0; y < nh; ++y) {
                    const float* src =
                        t.ptr() + (((ci * t.shape.d + z + z0) * t.shape.h + y + y0) * t.shape.w) + x0;
                    float* dst = out.ptr() + ((ci * nd + z) * nh + y) * nw;
                    std::copy(src, src + nw, dst);
                }
            }
        }
        return out;
    };
    c.image = crop(c.image);
    c.label = crop(c.label);
}

namespace {

// Symmetric zero pad so every axis reaches at least the patch extent.
Tensor5<float> pad_to(const Tensor5<float>& t, Axes3 target) {
    const Shape5& s = t.shape;
    const int64_t nd = std::max(s.d, target.d);
    const int64_t nh = std::max(s.h, target.h);
    const int64_t nw = std::max(s.w, target.w);
    if (nd == s.d && nh == s.h && nw == s.w) return t;
    const int64_t oz = (nd - s.d) / 2, oy = (nh - s.h) / 2, ox = (nw - s.w) / 2;
    Tensor5<float> out(Shape5{s.n, s.c, nd, nh, nw}, 0.0f);
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            for (int64_t z = 0; z < s.d; ++z) {
                for (int64_t y = 0; y < s.h; ++y) {
                    const float* src = t.ptr() + (((n * s.c + c) * s.d + z) * s.h + y) * s.w;
                    float* dst = out.ptr() +
                                 ((((n * s.c + c) * nd + z + oz) * nh + y + oy) * nw) + ox;
                    std::copy(src, src + s.w, dst);
                }
            }
        }
    }
    return out;
}

Tensor5<float> extract(const Tensor5<float>& t, int64_t oz, int64_t oy, int64_t ox, Axes3 p) {
    const Shape5& s = t.shape;
    Tensor5<float> out(Shape5{s.n, s.c, p.d, p.h, p.w});
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            for (int64_t z = 0; z < p.d; ++z) {
                for (int64_t y = 0; y < p.h; ++y) {
                    const float* src =
                        t.ptr() + (((n * s.c + c) * s.d + z + oz) * s.h + y + oy) * s.w + ox;
                    float* dst = out.ptr() + (((n * s.c + c) * p.d + z) * p.h + y) * p.w;
                    std::copy(src, src + p.w, dst);
                }
            }
        }
    }
    return out;
}

}  // namespace

std::pair<Tensor5<float>, Tensor5<float>> sample_patch(const Case& c, Axes3 patch, Rng& rng) {
    if (patch.d <= 0 || patch.h <= 0 || patch.w <= 0)
        throw ArgumentError("patch extents must be positive");
    const Tensor5<float> img = pad_to(c.image, patch);
    const Tensor5<float> lab = pad_to(c.label, patch);
    const Shape5& s = img.shape;

    std::vector<int64_t> fg;  // flat spatial indices with any foreground channel
    const int64_t vol = s.spatial();
    for (int64_t v = 0; v < vol; ++v) {
        for (int64_t ci = 0; ci < lab.shape.c; ++ci) {
            if (lab.ptr()[ci * vol + v] > 0.5f) {
                fg.push_back(v);
                break;
            }
        }
    }

    const bool want_fg = rng.coin();
    int64_t oz = 0, oy = 0, ox = 0;
    if (want_fg && !fg.empty()) {
        const int64_t v = fg[static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(fg.size())))];
        const int64_t az = v / (s.h * s.w);
        const int64_t ay = (v / s.w) % s.h;
        const int64_t ax = v % s.w;
        auto anchored = [&rng](int64_t a, int64_t extent, int64_t p) {
            const int64_t lo = std::max<int64_t>(0, a - p + 1);
            const int64_t hi = std::min(a, extent - p);
            return lo + static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(hi - lo + 1)));
        };
        oz = anchored(az, s.d, patch.d);
        oy = anchored(ay, s.h, patch.h);
        ox = anchored(ax, s.w, patch.w);
    } else {
        oz = static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(s.d - patch.d + 1)));
        oy = static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(s.h - patch.h + 1)));
        ox = static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(s.w - patch.w + 1)));
    }
    return {extract(img, oz, oy, ox, patch), extract(lab, oz, oy, ox, patch)};
}

void axial_hflip(Tensor5<float>& image, Tensor5<float>& label, Rng& rng) {
    if (!rng.coin()) return;
    auto flip_w = [](Tensor5<float>& t) {
        const Shape5& s = t.shape;
        const int64_t rows = s.n * s.c * s.d * s.h;
        for (int64_t r = 0; r < rows; ++r) {
            float* row = t.ptr() + r * s.w;
            std::reverse(row, row + s.w);
        }
    };
    flip_w(image);
    flip_w(label);
}

DatasetManifest synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    if (spec.cases <= 0 || spec.channels <= 0 || spec.classes <= 0)
        throw ArgumentError("synthetic spec requires positive cases/channels/classes");
    if (spec.depth_min <= 0 || spec.depth_min > spec.depth_max || spec.hw_min <= 0 ||
        spec.hw_min > spec.hw_max)
        throw ArgumentError("synthetic spec has an empty extent range");

    Rng rng(spec.seed);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    std::vector<std::string> dirs;
    for (int64_t i = 0; i < spec.cases; ++i) {
        const int64_t d =
            spec.depth_min +
            static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(spec.depth_max - spec.depth_min + 1)));
        const int64_t h =
            spec.hw_min +
            static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(spec.hw_max - spec.hw_min + 1)));
        const int64_t w =
            spec.hw_min +
            static_cast<int64_t>(rng.uniform_int(static_cast<int64_t>(spec.hw_max - spec.hw_min + 1)));

        Case c;
        char name[32];
        std::snprintf(name, sizeof(name), "case_%03d", static_cast<int>(i));
        c.id = name;
        c.image = Tensor5<float>(Shape5{1, spec.channels, d, h, w}, 0.0f);
        c.label = Tensor5<float>(Shape5{1, spec.classes, d, h, w}, 0.0f);

        // One ellipsoid per class; centers stay away from the border so the
        // foreground is never clipped empty.
        struct Blob {
            double cz, cy, cx, rz, ry, rx;
        };
        std::vector<Blob> blobs;
        for (int64_t k = 0; k < spec.classes; ++k) {
            Blob b;
            b.cz = rng.uniform(0.3 * d, 0.7 * d);
            b.cy = rng.uniform(0.3 * h, 0.7 * h);
            b.cx = rng.uniform(0.3 * w, 0.7 * w);
            b.rz = std::max(1.5, rng.uniform(d / 6.0, d / 3.0));
            b.ry = std::max(1.5, rng.uniform(h / 6.0, h / 3.0));
            b.rx = std::max(1.5, rng.uniform(w / 6.0, w / 3.0));
            blobs.push_back(b);
            float* lp = c.label.ptr() + k * d * h * w;
            for (int64_t z = 0; z < d; ++z) {
                for (int64_t y = 0; y < h; ++y) {
                    for (int64_t x = 0; x < w; ++x) {
                        const double fz = (z - b.cz) / b.rz;
                        const double fy = (y - b.cy) / b.ry;
                        const double fx = (x - b.cx) / b.rx;
                        if (fz * fz + fy * fy + fx * fx <= 1.0) lp[(z * h + y) * w + x] = 1.0f;
                    }
                }
            }
        }
        for (int64_t ch = 0; ch < spec.channels; ++ch) {
            float* ip = c.image.ptr() + ch * d * h * w;
            for (int64_t v = 0; v < d * h * w; ++v)
                ip[v] = static_cast<float>(0.3 * rng.normal());
            for (int64_t k = 0; k < spec.classes; ++k) {
                const float lift = static_cast<float>(0.8 + 0.4 * k + 0.2 * ch);
                const float* lp = c.label.ptr() + k * d * h * w;
                for (int64_t v = 0; v < d * h * w; ++v)
                    if (lp[v] > 0.5f) ip[v] += lift;
            }
        }

        save_case(c, out_dir + "/" + c.id);
        dirs.push_back(c.id);
    }

    json j;
    j["cases"] = dirs;
    write_text_file(out_dir + "/manifest.json", j.dump(2) + "\n");
    return load_manifest(out_dir);
}

}  // namespace voxnas
