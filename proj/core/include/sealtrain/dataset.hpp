#pragma once

// Plaintext training data on disk: IDX (MNIST) and "label,p0,...,pN" CSV.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sealtrain/network.hpp"

namespace sealtrain::data {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// u8 samples, row-major.
struct Dataset {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t classes = 0;
    std::vector<std::uint8_t> pixels;  // rows x cols
    std::vector<std::uint8_t> labels;  // rows

    [[nodiscard]] std::size_t row_floats() const noexcept { return cols + classes; }
};

enum class Format { kIdx, kCsv };

struct DatasetSource {
    std::filesystem::path images;
    std::filesystem::path labels;  // unused for CSV
    Format format = Format::kIdx;
    // 0 = accept whatever the files contain.
    std::size_t expected_rows = 0;
    std::size_t expected_cols = 0;
    std::size_t expected_classes = 0;
};

Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 0);
Dataset read_csv(const std::filesystem::path& path, std::size_t classes = 0);
/// Parses and validates `src` against its expected counts.
Dataset load_dataset(const DatasetSource& src);

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const Dataset& d,
               std::size_t height = 0, std::size_t width = 0);
void write_csv(const std::filesystem::path& path, const Dataset& d);

/// pixel/255 followed by the one-hot label, as stored in the persistent matrix.
std::vector<float> normalized_row(const Dataset& d, std::size_t row);
/// Rows [first, first + count) as a float batch.
nn::Batch to_batch(const Dataset& d, std::size_t first = 0, std::optional<std::size_t> count = std::nullopt);

}  // namespace sealtrain::data
