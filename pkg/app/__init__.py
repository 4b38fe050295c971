# Laboratorio TSP - Paquete principal
