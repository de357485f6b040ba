#include <algorithm>
#include <charconv>
#include <fstream>
#include <string>

#include "sealtrain/dataset.hpp"
#include "sealtrain/error.hpp"

namespace sealtrain::data {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) {
        throw ParseError("cannot open " + p.string());
    }
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void put_be32(std::ofstream& f, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    f.write(b, 4);
}

std::size_t infer_classes(const std::vector<std::uint8_t>& labels, std::size_t classes) {
    const std::size_t max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    if (classes == 0) {
        return max_label + 1;
    }
    if (max_label >= classes) {
        throw ParseError("label " + std::to_string(max_label) + " out of range for " + std::to_string(classes) +
                         " classes");
    }
    return classes;
}

}  // namespace

Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes) {
    const auto img = slurp(images);
    const auto lab = slurp(labels);
    if (img.size() < 16 || be32(img, 0) != kIdxImagesMagic) {
        throw ParseError(images.string() + ": not an IDX image file");
    }
    if (lab.size() < 8 || be32(lab, 0) != kIdxLabelsMagic) {
        throw ParseError(labels.string() + ": not an IDX label file");
    }
    Dataset d;
    d.rows = be32(img, 4);
    d.cols = std::size_t{be32(img, 8)} * be32(img, 12);
    if (be32(lab, 4) != d.rows) {
        throw ParseError("image and label counts differ");
    }
    if (img.size() != 16 + d.rows * d.cols || lab.size() != 8 + d.rows) {
        throw ParseError("IDX payload size does not match header");
    }
    d.pixels.assign(img.begin() + 16, img.end());
    d.labels.assign(lab.begin() + 8, lab.end());
    d.classes = infer_classes(d.labels, classes);
    return d;
}

Dataset read_csv(const std::filesystem::path& path, std::size_t classes) {
    std::ifstream f(path);
    if (!f) {
        throw ParseError("cannot open " + path.string());
    }
    Dataset d;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<int> vals;
        const char* p = line.data();
        const char* end = p + line.size();
        bool numeric = true;
        while (p <= end) {
            const char* comma = std::find(p, end, ',');
            int v = 0;
            const auto [ptr, ec] = std::from_chars(p, comma, v);
            if (ec != std::errc{} || ptr != comma) {
                numeric = false;
                break;
            }
            vals.push_back(v);
            p = comma + 1;
        }
        if (!numeric) {
            if (d.rows == 0 && line_no == 1) continue;  // header
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
        }
        if (vals.size() < 2) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": need label and pixels");
        }
        if (d.rows == 0) {
            d.cols = vals.size() - 1;
        } else if (vals.size() - 1 != d.cols) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
        }
        for (const int v : vals) {
            if (v < 0 || v > 255) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": value out of 0..255");
            }
        }
        d.labels.push_back(static_cast<std::uint8_t>(vals[0]));
        for (std::size_t i = 1; i < vals.size(); ++i) {
            d.pixels.push_back(static_cast<std::uint8_t>(vals[i]));
        }
        ++d.rows;
    }
    d.classes = infer_classes(d.labels, classes);
    return d;
}

Dataset load_dataset(const DatasetSource& src) {
    Dataset d = src.format == Format::kIdx ? read_idx(src.images, src.labels, src.expected_classes)
                                           : read_csv(src.images, src.expected_classes);
    auto check = [](std::size_t want, std::size_t got, const char* what) {
        if (want != 0 && want != got) {
            throw ParseError(std::string("expected ") + std::to_string(want) + " " + what + ", found " +
                             std::to_string(got));
        }
    };
    check(src.expected_rows, d.rows, "rows");
    check(src.expected_cols, d.cols, "columns");
    return d;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const Dataset& d,
               std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) {
        height = 1;
        width = d.cols;
    }
    if (height * width != d.cols) {
        throw ShapeError("height x width does not match column count");
    }
    std::ofstream fi(images, std::ios::binary | std::ios::trunc);
    put_be32(fi, kIdxImagesMagic);
    put_be32(fi, static_cast<std::uint32_t>(d.rows));
    put_be32(fi, static_cast<std::uint32_t>(height));
    put_be32(fi, static_cast<std::uint32_t>(width));
    fi.write(reinterpret_cast<const char*>(d.pixels.data()), static_cast<std::streamsize>(d.pixels.size()));
    std::ofstream fl(labels, std::ios::binary | std::ios::trunc);
    put_be32(fl, kIdxLabelsMagic);
    put_be32(fl, static_cast<std::uint32_t>(d.rows));
    fl.write(reinterpret_cast<const char*>(d.labels.data()), static_cast<std::streamsize>(d.labels.size()));
    if (!fi || !fl) {
        throw Error("failed writing IDX files");
    }
}

void write_csv(const std::filesystem::path& path, const Dataset& d) {
    std::ofstream f(path, std::ios::trunc);
    for (std::size_t r = 0; r < d.rows; ++r) {
        f << int{d.labels[r]};
        for (std::size_t c = 0; c < d.cols; ++c) {
            f << ',' << int{d.pixels[r * d.cols + c]};
        }
        f << '\n';
    }
}

std::vector<float> normalized_row(const Dataset& d, std::size_t row) {
    std::vector<float> out(d.row_floats(), 0.0f);
    for (std::size_t c = 0; c < d.cols; ++c) {
        out[c] = static_cast<float>(d.pixels[row * d.cols + c]) / 255.0f;
    }
    out[d.cols + d.labels[row]] = 1.0f;
    return out;
}

nn::Batch to_batch(const Dataset& d, std::size_t first, std::optional<std::size_t> count) {
    const std::size_t n = count.value_or(d.rows - first);
    if (first + n > d.rows) {
        throw ShapeError("batch range past end of dataset");
    }
    nn::Batch b;
    b.size = n;
    b.input_dim = d.cols;
    b.classes = d.classes;
    b.inputs.resize(n * d.cols);
    b.labels.assign(n * d.classes, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = normalized_row(d, first + i);
        std::copy_n(row.begin(), d.cols, b.inputs.begin() + static_cast<std::ptrdiff_t>(i * d.cols));
        std::copy_n(row.begin() + static_cast<std::ptrdiff_t>(d.cols), d.classes,
                    b.labels.begin() + static_cast<std::ptrdiff_t>(i * d.classes));
    }
    return b;
}

}  // namespace sealtrain::data
