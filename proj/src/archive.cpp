#include "raptor/archive.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "raptor/errors.hpp"
#include "raptor/util.hpp"

namespace raptor {

namespace fs = std::filesystem;

namespace {

constexpr size_t kBlock = 512;
constexpr size_t kMaxDecompressed = 256u << 20;

uint64_t parse_octal(const char* field, size_t len) {
    uint64_t v = 0;
    for (size_t i = 0; i < len; ++i) {
        char c = field[i];
        if (c == '\0' || c == ' ') break;
        if (c < '0' || c > '7') throw Error(Errc::InvalidArchive, "bad octal field in tar header");
        v = v * 8 + uint64_t(c - '0');
    }
    return v;
}

void write_octal(char* field, size_t len, uint64_t v) {
    // len-1 digits, NUL terminated
    for (size_t i = len - 1; i-- > 0;) {
        field[i] = char('0' + (v & 7));
        v >>= 3;
    }
    field[len - 1] = '\0';
}

unsigned header_checksum(const char* hdr) {
    unsigned sum = 0;
    for (size_t i = 0; i < kBlock; ++i)
        sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(hdr[i]);
    return sum;
}

bool block_is_zero(const char* p) {
    for (size_t i = 0; i < kBlock; ++i)
        if (p[i] != '\0') return false;
    return true;
}

} // namespace

bool looks_gzipped(const std::string& data) {
    return data.size() >= 2 && uint8_t(data[0]) == 0x1f && uint8_t(data[1]) == 0x8b;
}

std::string gzip_compress(const std::string& data) {
    z_stream strm{};
    if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK)
        throw Error(Errc::InvalidArchive, "deflate init failed");
    std::string out;
    out.resize(deflateBound(&strm, static_cast<uLong>(data.size())));
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
    strm.avail_in = static_cast<uInt>(data.size());
    strm.next_out = reinterpret_cast<Bytef*>(out.data());
    strm.avail_out = static_cast<uInt>(out.size());
    int rc = deflate(&strm, Z_FINISH);
    deflateEnd(&strm);
    if (rc != Z_STREAM_END) throw Error(Errc::InvalidArchive, "deflate failed");
    out.resize(out.size() - strm.avail_out);
    return out;
}

std::string gzip_decompress(const std::string& data) {
    z_stream strm{};
    if (inflateInit2(&strm, 15 + 32) != Z_OK) // accept gzip or zlib wrapping
        throw Error(Errc::InvalidArchive, "inflate init failed");
    std::string out;
    std::string buf(64 * 1024, '\0');
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
    strm.avail_in = static_cast<uInt>(data.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = reinterpret_cast<Bytef*>(buf.data());
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw Error(Errc::InvalidArchive, "corrupt compressed archive");
        }
        out.append(buf.data(), buf.size() - strm.avail_out);
        if (out.size() > kMaxDecompressed) {
            inflateEnd(&strm);
            throw Error(Errc::InvalidArchive, "archive too large");
        }
        if (rc == Z_OK && strm.avail_in == 0 && strm.avail_out != 0) {
            inflateEnd(&strm);
            throw Error(Errc::InvalidArchive, "truncated compressed archive");
        }
    }
    inflateEnd(&strm);
    return out;
}

void extract_archive(const std::string& raw, const fs::path& dest_root) {
    const std::string data = looks_gzipped(raw) ? gzip_decompress(raw) : raw;
    if (data.size() % kBlock != 0)
        throw Error(Errc::InvalidArchive, "tar stream is not block aligned");

    size_t off = 0;
    while (off + kBlock <= data.size()) {
        const char* hdr = data.data() + off;
        if (block_is_zero(hdr)) break; // end-of-archive marker

        char name_field[101] = {0};
        std::memcpy(name_field, hdr, 100);
        char prefix_field[156] = {0};
        std::memcpy(prefix_field, hdr + 345, 155);
        std::string name = prefix_field[0] ? std::string(prefix_field) + "/" + name_field
                                           : std::string(name_field);

        uint64_t size = parse_octal(hdr + 124, 12);
        unsigned stored_sum = static_cast<unsigned>(parse_octal(hdr + 148, 8));
        if (stored_sum != header_checksum(hdr))
            throw Error(Errc::InvalidArchive, "tar header checksum mismatch");
        char type = hdr[156];
        off += kBlock;

        size_t data_blocks = static_cast<size_t>((size + kBlock - 1) / kBlock);
        if (off + data_blocks * kBlock > data.size())
            throw Error(Errc::InvalidArchive, "tar entry runs past end of archive");

        if (type == 'x' || type == 'g') { // pax metadata: skip
            off += data_blocks * kBlock;
            continue;
        }

        // strip a leading "./"
        if (name.rfind("./", 0) == 0) name = name.substr(2);
        bool dir_entry = type == '5' || (!name.empty() && name.back() == '/');
        if (dir_entry && !name.empty() && name.back() == '/') name.pop_back();

        if (!is_safe_relative_path(name))
            throw Error(Errc::InvalidArchive, "archive entry '" + name + "' escapes the code root");

        if (dir_entry) {
            std::error_code ec;
            fs::create_directories(dest_root / name, ec);
            if (ec) throw Error(Errc::InvalidArchive, "cannot create directory '" + name + "'");
        } else if (type == '0' || type == '\0') {
            fs::path target = dest_root / name;
            std::error_code ec;
            fs::create_directories(target.parent_path(), ec);
            std::ofstream out(target, std::ios::binary | std::ios::trunc);
            if (!out)
                throw Error(Errc::InvalidArchive, "cannot write archive entry '" + name + "'");
            out.write(data.data() + off, static_cast<std::streamsize>(size));
            out.close();
            uint64_t mode = parse_octal(hdr + 100, 8);
            fs::permissions(target, static_cast<fs::perms>(mode & 0777),
                            fs::perm_options::replace, ec);
        } else {
            throw Error(Errc::InvalidArchive,
                        std::string("unsupported tar entry type '") + type + "' for '" + name + "'");
        }
        off += data_blocks * kBlock;
    }
}

std::string make_tar(const std::map<std::string, std::string>& files) {
    std::string out;
    for (const auto& [name, content] : files) {
        char hdr[kBlock] = {0};
        if (name.size() > 100) throw Error(Errc::InvalidArchive, "tar name too long");
        std::memcpy(hdr, name.data(), name.size());
        write_octal(hdr + 100, 8, 0644);
        write_octal(hdr + 108, 8, 0);
        write_octal(hdr + 116, 8, 0);
        write_octal(hdr + 124, 12, content.size());
        write_octal(hdr + 136, 12, 0);
        hdr[156] = '0';
        std::memcpy(hdr + 257, "ustar", 6);
        std::memcpy(hdr + 263, "00", 2);
        std::memset(hdr + 148, ' ', 8);
        unsigned sum = header_checksum(hdr);
        char sum_field[8] = {0};
        write_octal(sum_field, 7, sum);
        sum_field[6] = '\0';
        sum_field[7] = ' ';
        std::memcpy(hdr + 148, sum_field, 8);
        out.append(hdr, kBlock);
        out += content;
        size_t pad = (kBlock - content.size() % kBlock) % kBlock;
        out.append(pad, '\0');
    }
    out.append(2 * kBlock, '\0');
    return out;
}

} // namespace raptor
