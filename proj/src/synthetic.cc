#include "socsum/synthetic.h"

#include <algorithm>
#include <string>

#include "socsum/common.h"

namespace socsum::synthetic {

namespace {

struct Topic {
  const char* name;
  std::vector<std::string> words;
};

const std::vector<Topic>& topics() {
  static const std::vector<Topic> t = {
      {"impuestos", {"gobierno", "impuestos", "reforma", "tributaria", "ministro", "hacienda",
                     "recaudacion", "empresas", "congreso", "votacion"}},
      {"futbol", {"equipo", "partido", "entrenador", "goles", "estadio", "hinchas", "campeonato",
                  "delantero", "arbitro", "seleccion"}},
      {"salud", {"hospital", "vacuna", "medicos", "pacientes", "salud", "urgencias", "camas",
                 "ministerio", "contagios", "enfermeras"}},
      {"educacion", {"escuela", "profesores", "alumnos", "educacion", "colegio", "clases",
                     "universidad", "matricula", "docentes", "aulas"}},
      {"transporte", {"metro", "tarifa", "buses", "pasajeros", "transporte", "linea",
                      "estacion", "trafico", "conductores", "recorrido"}},
      {"vivienda", {"vivienda", "arriendo", "precios", "departamentos", "barrio", "familias",
                    "subsidio", "construccion", "terrenos", "hipotecas"}},
      {"pensiones", {"pensiones", "jubilacion", "afp", "cotizaciones", "ahorro", "adultos",
                     "mayores", "retiro", "fondos", "trabajadores"}},
      {"ambiente", {"contaminacion", "bosques", "incendio", "sequia", "agua", "rios", "clima",
                    "emisiones", "glaciares", "reciclaje"}},
      {"seguridad", {"delincuencia", "carabineros", "robos", "policia", "detenidos", "fiscal",
                     "victimas", "comuna", "patrullaje", "denuncias"}},
      {"tecnologia", {"internet", "telefonos", "datos", "aplicacion", "redes", "usuarios",
                      "privacidad", "empresa", "inteligencia", "software"}},
      {"economia", {"inflacion", "dolar", "banco", "central", "tasas", "creditos", "consumo",
                    "sueldos", "mercado", "crecimiento"}},
      {"cultura", {"festival", "musica", "teatro", "artistas", "entradas", "publico", "cine",
                   "museo", "libros", "escenario"}},
  };
  return t;
}

const std::vector<std::string>& function_words() {
  static const std::vector<std::string> w = {"el", "la", "de", "que", "en", "los", "por",
                                             "para", "con", "una", "es", "se", "lo", "las",
                                             "del", "al", "muy", "mas"};
  return w;
}

const std::vector<std::string>& chatter_words() {
  static const std::vector<std::string> w = {
      "creo", "verdad", "gente", "siempre", "nunca", "otra", "vez", "pais", "todos", "nadie",
      "dice", "nada", "bueno", "malo", "igual", "cosa", "ahora", "antes", "claro", "parece"};
  return w;
}

template <typename V>
const typename V::value_type& pick(const V& v, Rng& rng) {
  return v[rng.below(v.size())];
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// Alternates content and function words so sentences look like prose.
std::string sentence(const std::vector<std::string>& content, int length, double content_share,
                     Rng& rng) {
  std::vector<std::string> words;
  for (int i = 0; i < length; ++i) {
    words.push_back(rng.uniform() < content_share ? pick(content, rng)
                                                  : pick(function_words(), rng));
  }
  return join(words);
}

std::string add_noise(std::string text, Rng& rng) {
  auto words = text::split_ws(text);
  if (words.empty()) return text;
  const size_t at = rng.below(words.size());
  switch (rng.below(6)) {
    case 0:
      words[at] = "<b>" + words[at] + "</b>";
      break;
    case 1:
      words.insert(words.begin() + at, "https://noticias.example/nota/" +
                                           std::to_string(rng.below(10000)));
      break;
    case 2:
      words.insert(words.begin() + at, "@lector" + std::to_string(rng.below(100)));
      break;
    case 3:
      words.push_back(rng.below(2) ? "jajaja" : "JAJAJAJA");
      break;
    case 4:
      words.back() += rng.below(2) ? "!!!" : "???";
      break;
    default:
      words[at] += " &amp;";
      break;
  }
  return join(words);
}

}  // namespace

std::vector<corpus::RawThread> generate(const Options& o) {
  if (o.n_threads < 0 || o.min_comments < 1 || o.max_comments < o.min_comments ||
      o.n_salient < 1) {
    throw ArgumentError("synthetic: invalid options");
  }
  Rng rng(o.seed);
  const auto& all = topics();
  std::vector<corpus::RawThread> out;
  for (int t = 0; t < o.n_threads; ++t) {
    const size_t topic = rng.below(all.size());
    size_t other = rng.below(all.size() - 1);
    if (other >= topic) ++other;
    const auto& words = all[topic].words;
    std::vector<std::string> off_topic = chatter_words();
    off_topic.insert(off_topic.end(), all[other].words.begin(), all[other].words.end());

    corpus::RawThread th;
    th.id = "t" + std::to_string(t + 1);
    th.title = sentence(words, 5 + static_cast<int>(rng.below(3)), 0.7, rng);

    const int n = o.min_comments + static_cast<int>(rng.below(o.max_comments - o.min_comments + 1));
    std::vector<bool> salient(n, false);
    for (int k = 0; k < std::min(o.n_salient, n); ++k) {
      size_t i;
      do {
        i = rng.below(n);
      } while (salient[i]);
      salient[i] = true;
    }
    for (int i = 0; i < n; ++i) {
      corpus::RawComment c;
      const int len = 6 + static_cast<int>(rng.below(7));
      if (salient[i]) {
        c.text = sentence(words, len, 0.6, rng);
        c.likes = 20 + static_cast<int64_t>(rng.below(181));
      } else {
        c.text = sentence(off_topic, len, 0.6, rng);
        c.likes = static_cast<int64_t>(rng.below(5));
      }
      c.author_hash = hex64(rng.next_u64()).substr(0, 8);
      if (o.noise && rng.uniform() < 0.4) c.text = add_noise(c.text, rng);
      th.comments.push_back(std::move(c));
    }
    if (o.noise && rng.uniform() < 0.5) {
      corpus::RawComment shortc;
      shortc.text = rng.below(2) ? "jajaja muy bueno" : "de acuerdo!!!";
      shortc.likes = static_cast<int64_t>(rng.below(3));
      th.comments.insert(th.comments.begin() + static_cast<std::ptrdiff_t>(rng.below(n + 1)),
                         std::move(shortc));
    }
    out.push_back(std::move(th));
  }
  return out;
}

std::vector<corpus::RawThread> toy_corpus() {
  auto thread = [](std::string id, std::string title, std::string liked,
                   std::vector<std::string> others) {
    corpus::RawThread t;
    t.id = std::move(id);
    t.title = std::move(title);
    t.comments.push_back({std::move(liked), 12, std::nullopt});
    for (auto& o : others) t.comments.push_back({std::move(o), 0, std::nullopt});
    return t;
  };
  return {
      thread("toy1", "sube la tarifa del metro",
             "la tarifa del metro sube otra vez este mes",
             {"no creo que nadie use el metro", "los buses siguen igual de llenos"}),
      thread("toy2", "gana el equipo local",
             "el equipo local gano con dos goles al final",
             {"el arbitro estuvo muy mal hoy", "la entrada al estadio fue cara"}),
      thread("toy3", "nueva vacuna en hospitales",
             "la nueva vacuna llega a todos los hospitales",
             {"faltan camas en las urgencias", "los medicos piden mas apoyo"}),
      thread("toy4", "reforma de impuestos en el congreso",
             "el congreso vota la reforma de impuestos hoy",
             {"las empresas esperan la votacion", "el ministro no dijo nada"}),
      thread("toy5", "festival de musica en la ciudad",
             "el festival de musica trae muchos artistas",
             {"las entradas se agotaron muy rapido", "el publico llego temprano"}),
  };
}

}  // namespace socsum::synthetic
