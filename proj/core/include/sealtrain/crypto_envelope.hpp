#pragma once

// AES-128-GCM envelopes. Stored layout: iv (12) || mac (16) || ciphertext.
// The ciphertext has the plaintext's length, so every buffer costs exactly
// 28 extra bytes. No additional authenticated data is bound.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace sealtrain::crypto {

inline constexpr std::size_t kKeySize = 16;
inline constexpr std::size_t kIvSize = 12;
inline constexpr std::size_t kMacSize = 16;
inline constexpr std::size_t kEnvelopeOverhead = kIvSize + kMacSize;

/// Fills the span with random bytes or throws.
using EntropySource = std::function<void(std::span<std::byte>)>;

/// OpenSSL's CSPRNG.
void system_entropy(std::span<std::byte> out);

/// 128-bit key. Wiped on destruction.
class Key128 {
public:
    Key128() = default;
    explicit Key128(std::span<const std::byte> bytes);
    Key128(const Key128&) = default;
    Key128& operator=(const Key128&) = default;
    ~Key128();

    [[nodiscard]] std::span<const std::byte, kKeySize> bytes() const noexcept { return bytes_; }
    bool operator==(const Key128& other) const noexcept { return bytes_ == other.bytes_; }

private:
    std::array<std::byte, kKeySize> bytes_{};
};

struct Envelope {
    std::array<std::byte, kIvSize> iv{};
    std::array<std::byte, kMacSize> mac{};
    std::vector<std::byte> ciphertext;

    [[nodiscard]] std::size_t stored_size() const noexcept { return ciphertext.size() + kEnvelopeOverhead; }
    [[nodiscard]] std::size_t plaintext_size() const noexcept { return ciphertext.size(); }
    [[nodiscard]] std::vector<std::byte> serialize() const;
    /// Splits a stored envelope. Throws IntegrityError if shorter than 28 bytes.
    static Envelope parse(std::span<const std::byte> stored);
};

Key128 generate_key(const EntropySource& entropy = system_entropy);

Envelope encrypt(const Key128& key, std::span<const std::byte> plaintext,
                 const EntropySource& entropy = system_entropy);

/// Encrypts straight into stored form; `out.size()` must be plaintext.size() + 28.
void encrypt_into(const Key128& key, std::span<const std::byte> plaintext, std::span<std::byte> out,
                  const EntropySource& entropy = system_entropy);

/// Throws IntegrityError on tag mismatch; nothing is returned in that case.
std::vector<std::byte> decrypt(const Key128& key, const Envelope& envelope);

/// Decrypts a stored envelope into `out` (size = stored.size() - 28). On
/// IntegrityError `out` is zeroed.
void decrypt_into(const Key128& key, std::span<const std::byte> stored, std::span<std::byte> out);

constexpr std::uint64_t envelope_overhead(std::uint64_t buffer_count) noexcept {
    return kEnvelopeOverhead * buffer_count;
}

/// Key file: exactly 16 raw bytes.
Key128 load_key_file(const std::filesystem::path& path);
void save_key_file(const std::filesystem::path& path, const Key128& key);
/// 32 hex digits.
Key128 key_from_hex(std::string_view hex);

/// Name of the environment variable consulted when no key file is given.
inline constexpr const char* kKeyEnvVar = "SEALTRAIN_KEY";

/// Key from `path` if given, otherwise from $SEALTRAIN_KEY (hex). Throws if neither.
Key128 provision_key(const std::optional<std::filesystem::path>& path);

}  // namespace sealtrain::crypto
