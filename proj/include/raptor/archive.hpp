#ifndef RAPTOR_ARCHIVE_HPP
#define RAPTOR_ARCHIVE_HPP

#include <filesystem>
#include <map>
#include <string>

namespace raptor {

// Extracts a tar or gzipped tar archive under dest_root. Entry paths must be
// safe relative paths; links and unknown entry kinds are rejected. Throws
// Error(InvalidArchive).
void extract_archive(const std::string& data, const std::filesystem::path& dest_root);

// Builds an uncompressed ustar archive; test and packaging helper.
std::string make_tar(const std::map<std::string, std::string>& files);

std::string gzip_compress(const std::string& data);
std::string gzip_decompress(const std::string& data);

bool looks_gzipped(const std::string& data);

} // namespace raptor

#endif
