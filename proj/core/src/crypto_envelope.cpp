#include "sealtrain/crypto_envelope.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

#include "sealtrain/error.hpp"

namespace sealtrain::crypto {

namespace {

struct CtxDeleter {
    void operator()(EVP_CIPHER_CTX* c) const noexcept { EVP_CIPHER_CTX_free(c); }
};
using CtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter>;

CtxPtr new_ctx() {
    CtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx) {
        throw Error("EVP_CIPHER_CTX_new failed");
    }
    return ctx;
}

auto uc(const std::byte* p) { return reinterpret_cast<const unsigned char*>(p); }
auto uc(std::byte* p) { return reinterpret_cast<unsigned char*>(p); }

int checked_len(std::size_t n) {
    if (n > static_cast<std::size_t>(std::numeric_limits<int>::max())) {
        throw Error("buffer too large for a single envelope");
    }
    return static_cast<int>(n);
}

void seal(const Key128& key, std::span<const std::byte, kIvSize> iv, std::span<const std::byte> plaintext,
          std::byte* ciphertext, std::byte* mac) {
    auto ctx = new_ctx();
    int len = 0;
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kIvSize, nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, uc(key.bytes().data()), uc(iv.data())) != 1) {
        throw Error("AES-GCM encrypt init failed");
    }
    if (!plaintext.empty() &&
        EVP_EncryptUpdate(ctx.get(), uc(ciphertext), &len, uc(plaintext.data()), checked_len(plaintext.size())) != 1) {
        throw Error("AES-GCM encrypt failed");
    }
    if (EVP_EncryptFinal_ex(ctx.get(), uc(ciphertext) + len, &len) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kMacSize, mac) != 1) {
        throw Error("AES-GCM finalize failed");
    }
}

bool open_sealed(const Key128& key, std::span<const std::byte> iv, std::span<const std::byte> mac,
                 std::span<const std::byte> ciphertext, std::byte* out) {
    auto ctx = new_ctx();
    int len = 0;
    if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_128_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kIvSize, nullptr) != 1 ||
        EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, uc(key.bytes().data()), uc(iv.data())) != 1) {
        throw Error("AES-GCM decrypt init failed");
    }
    if (!ciphertext.empty() &&
        EVP_DecryptUpdate(ctx.get(), uc(out), &len, uc(ciphertext.data()), checked_len(ciphertext.size())) != 1) {
        return false;
    }
    // OpenSSL takes a non-const tag pointer but does not modify it.
    std::array<std::byte, kMacSize> tag{};
    std::copy(mac.begin(), mac.end(), tag.begin());
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kMacSize, tag.data()) != 1) {
        return false;
    }
    return EVP_DecryptFinal_ex(ctx.get(), uc(out) + len, &len) == 1;
}

}  // namespace

void system_entropy(std::span<std::byte> out) {
    if (out.empty()) {
        return;
    }
    if (RAND_bytes(uc(out.data()), checked_len(out.size())) != 1) {
        throw Error("entropy source failure");
    }
}

Key128::Key128(std::span<const std::byte> bytes) {
    if (bytes.size() != kKeySize) {
        throw Error("key must be exactly 16 bytes, got " + std::to_string(bytes.size()));
    }
    std::copy(bytes.begin(), bytes.end(), bytes_.begin());
}

Key128::~Key128() { OPENSSL_cleanse(bytes_.data(), bytes_.size()); }

std::vector<std::byte> Envelope::serialize() const {
    std::vector<std::byte> out;
    out.reserve(stored_size());
    out.insert(out.end(), iv.begin(), iv.end());
    out.insert(out.end(), mac.begin(), mac.end());
    out.insert(out.end(), ciphertext.begin(), ciphertext.end());
    return out;
}

Envelope Envelope::parse(std::span<const std::byte> stored) {
    if (stored.size() < kEnvelopeOverhead) {
        throw IntegrityError("envelope shorter than 28 bytes");
    }
    Envelope e;
    std::copy_n(stored.begin(), kIvSize, e.iv.begin());
    std::copy_n(stored.begin() + kIvSize, kMacSize, e.mac.begin());
    e.ciphertext.assign(stored.begin() + kEnvelopeOverhead, stored.end());
    return e;
}

Key128 generate_key(const EntropySource& entropy) {
    std::array<std::byte, kKeySize> raw{};
    entropy(raw);
    Key128 k(raw);
    OPENSSL_cleanse(raw.data(), raw.size());
    return k;
}

Envelope encrypt(const Key128& key, std::span<const std::byte> plaintext, const EntropySource& entropy) {
    Envelope e;
    entropy(e.iv);
    e.ciphertext.resize(plaintext.size());
    seal(key, e.iv, plaintext, e.ciphertext.data(), e.mac.data());
    return e;
}

void encrypt_into(const Key128& key, std::span<const std::byte> plaintext, std::span<std::byte> out,
                  const EntropySource& entropy) {
    if (out.size() != plaintext.size() + kEnvelopeOverhead) {
        throw Error("envelope slot of " + std::to_string(out.size()) + " bytes cannot hold " +
                    std::to_string(plaintext.size()) + " plaintext bytes");
    }
    std::array<std::byte, kIvSize> iv{};
    entropy(iv);
    std::copy(iv.begin(), iv.end(), out.begin());
    seal(key, iv, plaintext, out.data() + kEnvelopeOverhead, out.data() + kIvSize);
}

std::vector<std::byte> decrypt(const Key128& key, const Envelope& envelope) {
    std::vector<std::byte> out(envelope.ciphertext.size());
    if (!open_sealed(key, envelope.iv, envelope.mac, envelope.ciphertext, out.data())) {
        OPENSSL_cleanse(out.data(), out.size());
        throw IntegrityError("envelope authentication failed");
    }
    return out;
}

void decrypt_into(const Key128& key, std::span<const std::byte> stored, std::span<std::byte> out) {
    if (stored.size() < kEnvelopeOverhead) {
        throw IntegrityError("envelope shorter than 28 bytes");
    }
    if (out.size() != stored.size() - kEnvelopeOverhead) {
        throw Error("output buffer does not match envelope plaintext size");
    }
    if (!open_sealed(key, stored.first(kIvSize), stored.subspan(kIvSize, kMacSize),
                     stored.subspan(kEnvelopeOverhead), out.data())) {
        OPENSSL_cleanse(out.data(), out.size());
        throw IntegrityError("envelope authentication failed");
    }
}

Key128 load_key_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot open key file " + path.string());
    }
    std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() != kKeySize) {
        throw Error("key file " + path.string() + " must hold exactly 16 bytes, found " +
                    std::to_string(raw.size()));
    }
    Key128 k(std::as_bytes(std::span{raw}));
    OPENSSL_cleanse(raw.data(), raw.size());
    return k;
}

void save_key_file(const std::filesystem::path& path, const Key128& key) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(key.bytes().data()), kKeySize);
    if (!f) {
        throw Error("cannot write key file " + path.string());
    }
    f.close();
    std::filesystem::permissions(path, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
}

Key128 key_from_hex(std::string_view hex) {
    if (hex.size() != 2 * kKeySize) {
        throw Error("hex key must have 32 digits");
    }
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw Error("invalid hex digit in key");
    };
    std::array<std::byte, kKeySize> raw{};
    for (std::size_t i = 0; i < kKeySize; ++i) {
        raw[i] = static_cast<std::byte>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    }
    Key128 k(raw);
    OPENSSL_cleanse(raw.data(), raw.size());
    return k;
}

Key128 provision_key(const std::optional<std::filesystem::path>& path) {
    if (path) {
        return load_key_file(*path);
    }
    if (const char* env = std::getenv(kKeyEnvVar); env != nullptr) {
        return key_from_hex(env);
    }
    throw Error(std::string("no key: pass a key file or set ") + kKeyEnvVar);
}

}  // namespace sealtrain::crypto
