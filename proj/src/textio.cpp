#include "pcofl/textio.hpp"

#include <cstdio>
#include <cstdlib>
#include <cerrno>

namespace pcofl {

std::string format_double(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Scalar parse_double(const std::string& s, const std::string& context) {
  const std::string t = trim(s);
  if (t.empty()) throw DataError(context + ": empty number");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (errno != 0 || end != t.c_str() + t.size())
    throw DataError(context + ": bad number '" + s + "'");
  return v;
}

long long parse_int(const std::string& s, const std::string& context) {
  const std::string t = trim(s);
  if (t.empty()) throw DataError(context + ": empty integer");
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (errno != 0 || end != t.c_str() + t.size())
    throw DataError(context + ": bad integer '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace pcofl
