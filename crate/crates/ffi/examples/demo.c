/* Prints the prerequisite edges of a trained model.
 *
 *   cargo build --release -p causal-kt-ffi
 *   cc crates/ffi/examples/demo.c -Icrates/ffi/include \
 *      target/release/libcausal_kt_ffi.a -lpthread -ldl -lm -o demo
 *   ./demo model/checkpoint.json 0.45
 */
#include <stdio.h>
#include <stdlib.h>

#include "causal_kt.h"

int main(int argc, char **argv) {
  if (argc < 2) {
    fprintf(stderr, "usage: %s CHECKPOINT [KAPPA]\n", argv[0]);
    return 2;
  }
  double kappa = argc > 2 ? atof(argv[2]) : 0.45;
  CktModel *model = NULL;
  if (ckt_model_load(argv[1], &model) != CKT_STATUS_OK) {
    fprintf(stderr, "load failed: %s\n", ckt_last_error_message());
    return 1;
  }
  size_t n = 0;
  ckt_model_num_skills(model, &n);
  uint8_t *adj = malloc(n * n);
  if (ckt_model_extract_adjacency(model, kappa, adj, n * n) != CKT_STATUS_OK) {
    fprintf(stderr, "extract failed: %s\n", ckt_last_error_message());
    ckt_model_free(model);
    free(adj);
    return 1;
  }
  char src[256], dst[256];
  for (size_t i = 0; i < n; i++) {
    for (size_t k = 0; k < n; k++) {
      if (!adj[i * n + k]) continue;
      ckt_model_skill_id(model, k, src, sizeof src, NULL);
      ckt_model_skill_id(model, i, dst, sizeof dst, NULL);
      printf("%s -> %s\n", src, dst);
    }
  }
  bool dag = false;
  ckt_is_dag(adj, n, &dag, NULL);
  printf("%zu skills, acyclic: %s\n", n, dag ? "yes" : "no");
  free(adj);
  ckt_model_free(model);
  return 0;
}
